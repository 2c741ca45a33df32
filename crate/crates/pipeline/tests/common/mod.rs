#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use afford_core::memory::save_bank;
use afford_core::query::QueryEntry;
use afford_core::synth::{
    generate_synthetic_scene, write_synthetic_scene, Scenario, SyntheticSceneSpec, ANNOTATIONS_FILE, GT_FILE,
    SCENE_DIR,
};
use afford_core::MemoryBank;
use afford_pipeline::cache::hash_tree;
use afford_pipeline::{build_memory, MemorySource, PipelineConfig, SceneInput};

/// A reduced desk scene: fewer, smaller frames keep the tests quick.
pub fn small_spec(seed: u64) -> SyntheticSceneSpec {
    let mut spec = SyntheticSceneSpec::desk(seed);
    spec.orbit.frame_count = 12;
    spec.image_width = 200;
    spec.image_height = 150;
    spec
}

pub fn write_bundle(spec: &SyntheticSceneSpec, dir: &Path) -> (Vec<QueryEntry>, Scenario) {
    let s = generate_synthetic_scene(spec).unwrap();
    write_synthetic_scene(&s, dir).unwrap();
    let queries = s
        .queries
        .iter()
        .map(|q| QueryEntry {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
        })
        .collect();
    (queries, s.scenario)
}

pub struct Fixture {
    pub root: PathBuf,
    pub bundle: PathBuf,
    pub source: PathBuf,
    pub bank_dir: PathBuf,
    pub bank: MemoryBank,
    pub bank_fp: String,
    pub queries: Vec<QueryEntry>,
    pub scenario: Scenario,
}

impl Fixture {
    /// Target scene `seed` with a bank built from scene `seed + 100`.
    pub fn new(root: &Path, seed: u64) -> Self {
        let source = root.join("source");
        write_bundle(&small_spec(seed + 100), &source);
        let bundle = root.join("target");
        let (queries, scenario) = write_bundle(&small_spec(seed), &bundle);
        let bank = build_memory(
            &[MemorySource {
                scene_dir: source.join(SCENE_DIR),
                annotations: source.join(ANNOTATIONS_FILE),
            }],
            &PipelineConfig::default(),
        )
        .unwrap();
        let bank_dir = root.join("bank");
        save_bank(&bank, &bank_dir).unwrap();
        let bank_fp = hash_tree(&bank_dir).unwrap();
        Fixture {
            root: root.to_path_buf(),
            bundle,
            source,
            bank_dir,
            bank,
            bank_fp,
            queries,
            scenario,
        }
    }

    pub fn input(&self) -> SceneInput {
        SceneInput {
            scene_dir: self.bundle.join(SCENE_DIR),
            queries: self.queries.clone(),
            gt_path: Some(self.bundle.join(GT_FILE)),
        }
    }
}

/// Relative path to contents for every file below `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}
