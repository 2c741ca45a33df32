mod common;

use std::fs;
use std::sync::{Arc, Mutex};

use afford_core::backends::replay::{box_key, frame_key, ReplayScript};
use afford_core::backends::{BoundingBox2D, Grounder, GroundingRequest, LanguageModel, Segmenter, SelectionRequest, Selector};
use afford_core::persist::persist_artifact;
use afford_core::{Frame, Mask};
use afford_pipeline::{
    Backends, BankRef, Mode, PipelineConfig, PipelineError, Runner, SceneOutcome, Stage, StageCache,
};
use common::{tree, Fixture};
use image::RgbImage;

fn run(
    fx: &Fixture,
    backends: &Backends,
    config: &PipelineConfig,
    cache: &StageCache,
    out: Option<&std::path::Path>,
    target: Stage,
    mode: Mode,
) -> Result<SceneOutcome, PipelineError> {
    let runner = Runner {
        config,
        backends,
        bank: Some(BankRef {
            bank: &fx.bank,
            fingerprint: fx.bank_fp.clone(),
        }),
        cache,
        out_dir: out,
    };
    runner.run_scene(&fx.input(), target, mode)
}

fn oracle(fx: &Fixture) -> Backends {
    Backends::oracle(vec![fx.scenario.clone()], false)
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = Fixture::new(tmp.path(), 3);
    let config = PipelineConfig::default();
    let b = oracle(&fx);
    for tag in ["a", "b"] {
        let cache = StageCache::open(&tmp.path().join(format!("cache-{tag}"))).unwrap();
        run(&fx, &b, &config, &cache, Some(&tmp.path().join(format!("out-{tag}"))), Stage::Eval, Mode::Through).unwrap();
    }
    let (a, b) = (tree(&tmp.path().join("out-a")), tree(&tmp.path().join("out-b")));
    assert!(a.keys().any(|k| k.ends_with("topdown.svg")));
    assert!(a.keys().any(|k| k.ends_with("selection.json")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs between runs", k.display());
    }
    let strip = |t: std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>| {
        t.into_iter().filter(|(k, _)| !k.ends_with(".lock")).collect::<Vec<_>>()
    };
    assert_eq!(strip(tree(&tmp.path().join("cache-a"))), strip(tree(&tmp.path().join("cache-b"))));
}

#[test]
fn cached_rerun_reproduces_results_without_new_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = Fixture::new(tmp.path(), 4);
    let config = PipelineConfig::default();
    let b = oracle(&fx);
    let cache = StageCache::open(&tmp.path().join("cache")).unwrap();
    let first = run(&fx, &b, &config, &cache, None, Stage::Eval, Mode::Through).unwrap();
    let entries = tree(&tmp.path().join("cache"));
    let again = run(&fx, &b, &config, &cache, None, Stage::Eval, Mode::Through).unwrap();
    let only = run(&fx, &b, &config, &cache, None, Stage::Eval, Mode::Only).unwrap();
    assert_eq!(tree(&tmp.path().join("cache")), entries);
    assert_eq!(first.records(), again.records());
    assert_eq!(first.records(), only.records());
    assert_eq!(first.records().len(), fx.queries.len());
}

#[test]
fn only_mode_names_the_first_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = Fixture::new(tmp.path(), 5);
    let config = PipelineConfig::default();
    let b = oracle(&fx);
    let cache = StageCache::open(&tmp.path().join("cache")).unwrap();
    let stage_of = |r: Result<SceneOutcome, PipelineError>| match r {
        Err(PipelineError::MissingStage { stage, .. }) => stage,
        other => panic!("expected a missing stage, got {:?}", other.map(|o| o.scene_id)),
    };
    assert_eq!(stage_of(run(&fx, &b, &config, &cache, None, Stage::Ground, Mode::Only)), "parse");
    // The target stage itself is computed in Only mode.
    run(&fx, &b, &config, &cache, None, Stage::Parse, Mode::Only).unwrap();
    let err = run(&fx, &b, &config, &cache, None, Stage::Fuse, Mode::Only).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("ground"), "{err}");
    run(&fx, &b, &config, &cache, None, Stage::Ground, Mode::Only).unwrap();
    run(&fx, &b, &config, &cache, None, Stage::Fuse, Mode::Only).unwrap();
    assert_eq!(stage_of(run(&fx, &b, &config, &cache, None, Stage::Select, Mode::Only)), "graph");
}

#[test]
fn inputs_that_change_results_invalidate_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = Fixture::new(tmp.path(), 6);
    let config = PipelineConfig::default();
    let b = oracle(&fx);
    let cache = StageCache::open(&tmp.path().join("cache")).unwrap();
    run(&fx, &b, &config, &cache, None, Stage::Parse, Mode::Through).unwrap();
    run(&fx, &b, &config, &cache, None, Stage::Ground, Mode::Only).unwrap();

    let changed = PipelineConfig {
        dbscan_eps: 0.04,
        ..config.clone()
    };
    assert!(run(&fx, &b, &changed, &cache, None, Stage::Ground, Mode::Only).is_err());
    // Thread count does not change results, so it does not change keys.
    let threads = PipelineConfig {
        concurrency: 3,
        ..config.clone()
    };
    run(&fx, &b, &threads, &cache, None, Stage::Ground, Mode::Only).unwrap();
    let noisy = Backends::oracle(vec![fx.scenario.clone()], true);
    assert!(run(&fx, &noisy, &config, &cache, None, Stage::Ground, Mode::Only).is_err());

    fs::write(fx.bundle.join("scene").join("extra.txt"), "x").unwrap();
    assert!(run(&fx, &b, &config, &cache, None, Stage::Ground, Mode::Only).is_err());
}

#[test]
fn runner_refuses_a_bank_built_from_the_target() {
    let tmp = tempfile::tempdir().unwrap();
    let mut fx = Fixture::new(tmp.path(), 7);
    let target_id = afford_core::scene_io::read_manifest(&fx.bundle.join("scene")).unwrap().scene_id;
    fx.bank.source_scene_ids.insert(target_id.clone());
    let b = oracle(&fx);
    let cache = StageCache::open(&tmp.path().join("cache")).unwrap();
    let err = run(&fx, &b, &PipelineConfig::default(), &cache, None, Stage::Parse, Mode::Through).unwrap_err();
    assert!(matches!(&err, PipelineError::Leakage { scene_id } if *scene_id == target_id));
    assert_eq!(err.exit_code(), 4);
    assert!(tree(&tmp.path().join("cache")).keys().all(|k| k.ends_with(".lock")));
}

#[test]
fn cache_lock_is_exclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cache");
    let held = StageCache::open(&dir).unwrap();
    let err = StageCache::open(&dir).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
    drop(held);
    StageCache::open(&dir).unwrap();
}

/// Forwards to an inner backend set and records every exchange as a replay script.
struct Recorder {
    inner: Backends,
    script: Mutex<ReplayScript>,
}

impl LanguageModel for Recorder {
    fn complete(&self, system: &str, user: &str, images: &[RgbImage]) -> afford_core::Result<String> {
        let r = self.inner.language.as_ref().unwrap().complete(system, user, images)?;
        self.script.lock().unwrap().complete.insert(user.to_string(), r.clone());
        Ok(r)
    }
}

impl Grounder<f64> for Recorder {
    fn respond(&self, request: &GroundingRequest<'_, f64>) -> afford_core::Result<String> {
        let r = self.inner.grounder.respond(request)?;
        let key = frame_key(request.scene_id, request.query_frame.index, request.interaction_label);
        self.script.lock().unwrap().ground.insert(key, r.clone());
        Ok(r)
    }
}

impl Selector for Recorder {
    fn respond(&self, request: &SelectionRequest) -> afford_core::Result<String> {
        let r = self.inner.selector.respond(request)?;
        self.script.lock().unwrap().select.insert(request.instruction.clone(), r.clone());
        Ok(r)
    }
}

impl Segmenter<f64> for Recorder {
    fn segment_by_text(&self, scene_id: &str, frame: &Frame, label: &str) -> afford_core::Result<Vec<Mask>> {
        let r = self.inner.segmenter.segment_by_text(scene_id, frame, label)?;
        let key = frame_key(scene_id, frame.index, label);
        self.script.lock().unwrap().segment_text.insert(key, r.clone());
        Ok(r)
    }

    fn segment_box(&self, scene_id: &str, frame: &Frame, bbox: &BoundingBox2D) -> afford_core::Result<Mask> {
        let r = self.inner.segmenter.segment_box(scene_id, frame, bbox)?;
        self.script.lock().unwrap().segment_box.insert(box_key(scene_id, frame.index, bbox), r.clone());
        Ok(r)
    }
}

#[test]
fn replayed_responses_reproduce_the_recorded_run() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = Fixture::new(tmp.path(), 8);
    let config = PipelineConfig::default();
    let rec = Arc::new(Recorder {
        inner: oracle(&fx),
        script: Mutex::new(ReplayScript::default()),
    });
    let recording = Backends {
        id: "recorder".into(),
        language: Some(rec.clone()),
        grounder: rec.clone(),
        selector: rec.clone(),
        segmenter: rec.clone(),
    };
    let cache = StageCache::open(&tmp.path().join("cache")).unwrap();
    let live = run(&fx, &recording, &config, &cache, None, Stage::Eval, Mode::Through).unwrap();
    let script = rec.script.lock().unwrap().clone();
    assert!(!script.ground.is_empty() && !script.segment_box.is_empty() && !script.select.is_empty());
    let path = tmp.path().join("replay.json");
    persist_artifact(&script, &path).unwrap();

    let replay = Backends::load_replay(&path).unwrap();
    assert!(replay.id.starts_with("mock-replay:"));
    let replayed = run(&fx, &replay, &config, &cache, None, Stage::Eval, Mode::Through).unwrap();
    assert_eq!(live.records(), replayed.records());
    let sel = |o: &SceneOutcome| o.queries.iter().map(|q| q.selection.clone()).collect::<Vec<_>>();
    assert_eq!(sel(&live), sel(&replayed));

    // An unrecorded request surfaces as a backend failure.
    let empty = Backends::replay(ReplayScript::default());
    let err = run(&fx, &empty, &config, &cache, None, Stage::Ground, Mode::Through).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
