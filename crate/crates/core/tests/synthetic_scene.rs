use afford_core::scene_io::{load_annotations, load_scene};
use afford_core::synth::{
    generate_synthetic_scene, pixel_ray, raycast, write_synthetic_scene, SyntheticSceneSpec, ANNOTATIONS_FILE,
    SCENE_DIR,
};
use afford_core::DepthMap;

fn small(seed: u64) -> SyntheticSceneSpec {
    let mut spec = SyntheticSceneSpec::desk(seed);
    spec.orbit.frame_count = 4;
    spec.image_width = 80;
    spec.image_height = 60;
    spec
}

#[test]
fn written_scene_loads_back_unchanged() {
    let synth = generate_synthetic_scene(&small(21)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_scene(&synth, dir.path()).unwrap();
    let scene = load_scene::<f64>(&dir.path().join(SCENE_DIR)).unwrap();

    assert_eq!(scene.scene_id, synth.scene.scene_id);
    assert_eq!(scene.cloud.len(), synth.scene.cloud.len());
    for (a, b) in scene.cloud.points.iter().zip(&synth.scene.cloud.points) {
        assert!(a.distance(*b) < 1e-6);
    }
    assert_eq!(scene.frames.len(), synth.scene.frames.len());
    for (a, b) in scene.frames.iter().zip(&synth.scene.frames) {
        assert_eq!(a.index, b.index);
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.intrinsics, b.intrinsics);
        for (x, y) in a.pose.to_row_major().iter().zip(b.pose.to_row_major()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.depth.data().iter().zip(b.depth.data()) {
            // Stored as f32 metres.
            assert!(!DepthMap::is_valid(*y) || (x - y).abs() < 1e-6);
        }
    }

    let ann = load_annotations(&dir.path().join(ANNOTATIONS_FILE), &scene.scene_id, Some(scene.cloud.len())).unwrap();
    assert_eq!(ann, synth.annotations);
}

/// Every depth pixel equals camera z of the nearest box hit along its ray,
/// rounded to the f32 precision the depth files store.
#[test]
fn rendered_depth_matches_ray_casting() {
    let synth = generate_synthetic_scene(&small(22)).unwrap();
    let boxes = synth.scenario.boxes();
    for f in &synth.scene.frames {
        let (w, h) = (f.depth.width(), f.depth.height());
        let mut hits = 0;
        for y in 0..h {
            for x in 0..w {
                let dir = f.pose.rotation.mul_vec(pixel_ray(x, y, &f.intrinsics));
                let got = f.depth.get(x, y);
                match raycast(&boxes, f.pose.translation, dir) {
                    Some((_, t)) => {
                        hits += 1;
                        assert_eq!(got, t as f32 as f64, "frame {} pixel ({x},{y})", f.index);
                    }
                    None => assert!(!DepthMap::is_valid(got), "frame {} pixel ({x},{y}) should be empty", f.index),
                }
            }
        }
        assert!(hits > 0);
    }
}
