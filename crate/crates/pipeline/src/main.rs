use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use afford_core::backends::oracle::OracleBackend;
use afford_core::backends::replay::ReplayBackend;
use afford_core::backends::Segmenter;
use afford_core::eval::{build_report, format_table};
use afford_core::memory::{load_bank, save_bank};
use afford_core::persist::load_artifact;
use afford_core::query::QueryEntry;
use afford_core::synth::{
    generate_synthetic_scene, write_synthetic_scene, Scenario, SyntheticSceneSpec, ANNOTATIONS_FILE, GT_FILE,
    QUERIES_FILE, SCENARIO_FILE, SCENE_DIR,
};
use afford_core::Error;
use afford_http::ChatConfig;
use afford_pipeline::cache::hash_tree;
use afford_pipeline::run::write_report;
use afford_pipeline::{
    build_memory, BackendKind, Backends, BankRef, MemorySource, Mode, PipelineConfig, PipelineError, Runner,
    SceneInput, SelectionMode, Stage, StageCache,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "afford", version, about = "Functional affordance grounding on posed RGB-D scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene bundles.
    Synth(SynthArgs),
    /// Build a memory bank from annotated source scenes.
    BuildMemory(MemoryArgs),
    /// Decompose queries.
    Parse(StageArgs),
    /// Ground the interactive element in every frame.
    Ground(StageArgs),
    /// Lift masks into 3D candidates.
    Fuse(StageArgs),
    /// Build, serialize and render the scene graph.
    Graph(StageArgs),
    /// Choose the final node.
    Select(StageArgs),
    /// Score selections against ground truth.
    Eval(StageArgs),
    /// Every stage in order.
    Run(StageArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Place a post between the cameras and the cabinet.
    #[arg(long)]
    occluded: bool,
}

#[derive(Args)]
struct MemoryArgs {
    /// Scene bundle directory (scene/ plus annotations.json); repeatable.
    #[arg(long = "source", required = true)]
    sources: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablation {
    Memory,
    Adversarial,
    Graph,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    theta_vis: Option<u32>,
    #[arg(long)]
    wilson: bool,
    #[arg(long)]
    dbscan_eps: Option<f64>,
    #[arg(long)]
    theta_iou: Option<f64>,
    #[arg(long)]
    theta_rec: Option<f64>,
    #[arg(long)]
    k_recall: Option<usize>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
}

#[derive(Args)]
struct StageArgs {
    /// Scene bundle directory (scene/, queries.json, gt.json, scenario.json); repeatable.
    #[arg(long = "bundle")]
    bundles: Vec<PathBuf>,
    /// Scene root holding manifest.json, used instead of a bundle.
    #[arg(long, requires = "queries", conflicts_with = "bundles")]
    scene: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Oracle ground truth for the mock-oracle backend.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Memory bank directory.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value = "afford-out")]
    out: PathBuf,
    /// Stage cache; defaults to <out>/cache.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Recorded responses for mock-replay, or the segmentation source for http.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, value_enum)]
    selection: Option<SelectionMode>,
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    /// Spurious masks from the oracle text segmenter.
    #[arg(long)]
    noisy: bool,
    #[arg(long)]
    concurrency: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

fn apply(config: &mut PipelineConfig, o: &Overrides) {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { config.$f = v; })* };
    }
    set!(k, tau_min, rho0, theta_vis, dbscan_eps, theta_iou, theta_rec, k_recall, w1, w2);
    if o.wilson {
        config.voting_mode = afford_core::fusion::VotingMode::Wilson;
    }
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<PipelineConfig, PipelineError> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    apply(&mut config, overrides);
    config.validate()?;
    Ok(config)
}

struct Job {
    input: SceneInput,
    scenario: Option<PathBuf>,
}

fn jobs(args: &StageArgs) -> Result<Vec<Job>, PipelineError> {
    if let Some(scene) = &args.scene {
        let queries: Vec<QueryEntry> = load_artifact(args.queries.as_ref().expect("clap requires queries"))?;
        return Ok(vec![Job {
            input: SceneInput {
                scene_dir: scene.clone(),
                queries,
                gt_path: args.gt.clone(),
            },
            scenario: args.scenario.clone(),
        }]);
    }
    if args.bundles.is_empty() {
        return Err(Error::Validation("pass --bundle or --scene with --queries".into()).into());
    }
    args.bundles
        .iter()
        .map(|b| {
            Ok(Job {
                input: SceneInput {
                    scene_dir: b.join(SCENE_DIR),
                    queries: load_artifact(&b.join(QUERIES_FILE))?,
                    gt_path: Some(b.join(GT_FILE)),
                },
                scenario: Some(b.join(SCENARIO_FILE)),
            })
        })
        .collect()
}

fn load_scenarios(jobs: &[Job]) -> Result<Vec<Scenario>, PipelineError> {
    jobs.iter()
        .map(|j| {
            let path = j.scenario.as_ref().ok_or_else(|| {
                Error::Validation("the mock-oracle backend needs a scenario file (--scenario or --bundle)".into())
            })?;
            Ok(load_artifact(path)?)
        })
        .collect()
}

fn backends(config: &PipelineConfig, args: &StageArgs, jobs: &[Job]) -> Result<Backends, PipelineError> {
    Ok(match config.backend {
        BackendKind::MockOracle => Backends::oracle(load_scenarios(jobs)?, config.noisy_segmenter),
        BackendKind::MockReplay => {
            let path = args
                .replay
                .as_ref()
                .ok_or_else(|| Error::Validation("the mock-replay backend needs --replay".into()))?;
            Backends::load_replay(path)?
        }
        BackendKind::Http => {
            let chat = ChatConfig::from_env()?;
            let (segmenter, id): (Arc<dyn Segmenter<f64>>, String) = match &args.replay {
                Some(p) => (Arc::new(ReplayBackend::load(p)?), format!("replay:{}", p.display())),
                None => (
                    Arc::new(OracleBackend::new(load_scenarios(jobs)?, config.noisy_segmenter)),
                    "oracle".into(),
                ),
            };
            Backends::http(chat, segmenter, &id)?
        }
    })
}

fn stage_command(target: Stage, mode: Mode, args: &StageArgs) -> Result<(), PipelineError> {
    let mut config = load_config(&args.config, &args.overrides)?;
    if let Some(b) = args.backend {
        config.backend = b;
    }
    if let Some(s) = args.selection {
        config.selection = s;
    }
    if let Some(c) = args.concurrency {
        config.concurrency = c;
    }
    config.noisy_segmenter |= args.noisy;
    for a in &args.ablate {
        match a {
            Ablation::Memory => config.ablations.no_memory = true,
            Ablation::Adversarial => config.ablations.no_adversarial = true,
            Ablation::Graph => config.ablations.no_graph = true,
        }
    }
    config.validate()?;
    let jobs = jobs(args)?;
    let bank = match &args.bank {
        Some(dir) => Some((load_bank::<f64>(dir)?, hash_tree(dir)?)),
        None => None,
    };
    // Refuse leakage before any backend is contacted.
    if let Some((b, _)) = &bank {
        for j in &jobs {
            let id = afford_core::scene_io::read_manifest(&j.input.scene_dir)?.scene_id;
            if b.source_scene_ids.contains(&id) {
                return Err(PipelineError::Leakage { scene_id: id });
            }
        }
    }
    let backends = backends(&config, args, &jobs)?;
    let cache = StageCache::open(&args.cache.clone().unwrap_or_else(|| args.out.join("cache")))?;
    let runner = Runner {
        config: &config,
        backends: &backends,
        bank: bank.as_ref().map(|(b, fp)| BankRef {
            bank: b,
            fingerprint: fp.clone(),
        }),
        cache: &cache,
        out_dir: Some(&args.out),
    };
    let mut records = Vec::new();
    for j in &jobs {
        let outcome = runner.run_scene(&j.input, target, mode)?;
        for q in &outcome.queries {
            if let Some(s) = &q.selection {
                info!("{}: node {:?} via {}", q.query_id, s.node_id, s.method);
            }
        }
        records.extend(outcome.records());
    }
    if target == Stage::Eval && !records.is_empty() {
        let report = build_report(records)?;
        write_report(&args.out, &report)?;
        print!("{}", format_table(&report));
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), PipelineError> {
    for seed in args.seed..args.seed + args.count {
        let spec = if args.occluded {
            SyntheticSceneSpec::occluded(seed)
        } else {
            SyntheticSceneSpec::desk(seed)
        };
        let scene = generate_synthetic_scene(&spec)?;
        let dir = args.out.join(&spec.scene_id);
        write_synthetic_scene(&scene, &dir)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn build_memory_command(args: &MemoryArgs) -> Result<(), PipelineError> {
    let config = load_config(&args.config, &args.overrides)?;
    let sources: Vec<MemorySource> = args
        .sources
        .iter()
        .map(|d| MemorySource {
            scene_dir: d.join(SCENE_DIR),
            annotations: d.join(ANNOTATIONS_FILE),
        })
        .collect();
    let bank = build_memory(&sources, &config)?;
    save_bank(&bank, &args.out)?;
    for c in bank.categories() {
        println!("{c}: {} exemplars", bank.recall(c).len());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildMemory(a) => build_memory_command(a),
        Command::Parse(a) => stage_command(Stage::Parse, Mode::Only, a),
        Command::Ground(a) => stage_command(Stage::Ground, Mode::Only, a),
        Command::Fuse(a) => stage_command(Stage::Fuse, Mode::Only, a),
        Command::Graph(a) => stage_command(Stage::Graph, Mode::Only, a),
        Command::Select(a) => stage_command(Stage::Select, Mode::Only, a),
        Command::Eval(a) => stage_command(Stage::Eval, Mode::Only, a),
        Command::Run(a) => stage_command(Stage::Eval, Mode::Through, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
