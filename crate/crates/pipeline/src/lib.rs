//! Stage-wise orchestration of affordance grounding: configuration, stage
//! caching, backend selection and the `afford` command line.

pub mod backend;
pub mod cache;
pub mod config;
pub mod error;
pub mod run;

pub use backend::Backends;
pub use cache::StageCache;
pub use config::{Ablations, BackendKind, PipelineConfig, SelectionMode};
pub use error::{PipelineError, Result};
pub use run::{build_memory, BankRef, MemorySource, Mode, Runner, SceneInput, SceneOutcome, Stage};
