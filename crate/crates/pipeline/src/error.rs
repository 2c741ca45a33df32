use std::path::PathBuf;

use afford_core::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] Error),
    /// The memory bank was built from the scene being evaluated.
    #[error("memory bank includes target scene '{scene_id}'; refusing to run")]
    Leakage { scene_id: String },
    #[error("stage '{stage}' has no cached artifact for query '{query_id}'; run it first")]
    MissingStage { stage: &'static str, query_id: String },
    #[error("cache directory {0} is locked by another run")]
    Locked(PathBuf),
}

impl PipelineError {
    /// Process exit status: 2 validation, 3 backend failure, 4 leakage refusal.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Leakage { .. } => 4,
            PipelineError::Core(Error::Backend { .. })
            | PipelineError::Core(Error::Parse { .. })
            | PipelineError::Core(Error::Selection(_)) => 3,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let leak = PipelineError::Leakage { scene_id: "s".into() };
        assert_eq!(leak.exit_code(), 4);
        let backend = PipelineError::Core(Error::Backend { attempts: 3, message: "down".into() });
        assert_eq!(backend.exit_code(), 3);
        assert_eq!(PipelineError::Core(Error::Validation("x".into())).exit_code(), 2);
        let missing = PipelineError::MissingStage { stage: "ground", query_id: "q".into() };
        assert_eq!(missing.exit_code(), 2);
        assert!(missing.to_string().contains("ground"));
    }
}
