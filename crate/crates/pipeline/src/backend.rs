//! Backend bundles: which implementation answers each model call.

use std::path::Path;
use std::sync::Arc;

use afford_core::backends::oracle::OracleBackend;
use afford_core::backends::replay::{ReplayBackend, ReplayScript};
use afford_core::backends::{Grounder, LanguageModel, Segmenter, Selector};
use afford_core::synth::Scenario;
use afford_core::{Error, Result};
use afford_http::{ChatClient, ChatConfig};

use crate::cache::digest;

#[derive(Clone)]
pub struct Backends {
    /// Stable identity folded into cache keys.
    pub id: String,
    pub language: Option<Arc<dyn LanguageModel>>,
    pub grounder: Arc<dyn Grounder<f64>>,
    pub selector: Arc<dyn Selector>,
    pub segmenter: Arc<dyn Segmenter<f64>>,
}

impl Backends {
    pub fn oracle(scenarios: Vec<Scenario>, noisy: bool) -> Self {
        let fingerprint = digest(&[serde_json::to_string(&scenarios)
            .expect("scenario serializes")
            .as_bytes()]);
        let oracle = Arc::new(OracleBackend::new(scenarios, noisy));
        Backends {
            id: format!("mock-oracle:{}:{fingerprint}", if noisy { "noisy" } else { "clean" }),
            language: Some(oracle.clone()),
            grounder: oracle.clone(),
            selector: oracle.clone(),
            segmenter: oracle,
        }
    }

    pub fn replay(script: ReplayScript) -> Self {
        let fingerprint = digest(&[serde_json::to_string(&script)
            .expect("script serializes")
            .as_bytes()]);
        let replay = Arc::new(ReplayBackend::new(script));
        Backends {
            id: format!("mock-replay:{fingerprint}"),
            language: Some(replay.clone()),
            grounder: replay.clone(),
            selector: replay.clone(),
            segmenter: replay,
        }
    }

    pub fn load_replay(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
        let script: ReplayScript = serde_json::from_str(&text)
            .map_err(|e| Error::ingestion(path, format!("bad replay script: {e}")))?;
        Ok(Self::replay(script))
    }

    /// Chat model for parsing, grounding and selection. No segmentation
    /// service speaks that protocol, so masks come from `segmenter`.
    pub fn http(config: ChatConfig, segmenter: Arc<dyn Segmenter<f64>>, segmenter_id: &str) -> Result<Self> {
        let id = format!("http:{}:{}:{segmenter_id}", config.endpoint, config.model);
        let client = Arc::new(ChatClient::new(config)?);
        Ok(Backends {
            id,
            language: Some(client.clone()),
            grounder: client.clone(),
            selector: client,
            segmenter,
        })
    }
}
