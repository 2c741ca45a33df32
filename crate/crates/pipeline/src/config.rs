//! Run configuration: every hyperparameter plus backend and ablation switches.

use std::path::Path;

use afford_core::backends::DEFAULT_CONCURRENCY;
use afford_core::fusion::VotingMode;
use afford_core::memory::{ScoreWeights, DEFAULT_K_RECALL};
use afford_core::{DepthFilterParams, Error, FusionParams, MemoryParams, VotingParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    MockOracle,
    MockReplay,
    Http,
}

/// How the final node is chosen among several interactive candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Ask the selection backend with graph JSON, map and crops.
    Backend,
    /// Deterministic spatial resolver over the graph.
    Resolver,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Ground by text segmentation instead of memory-prompted boxes.
    pub no_memory: bool,
    /// Request positive boxes only.
    pub no_adversarial: bool,
    /// Pick the best-supported candidate without building a graph.
    pub no_graph: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: f64,
    pub tau_min: f64,
    pub rho0: f64,
    pub theta_vis: u32,
    pub voting_mode: VotingMode,
    pub wilson_z: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub theta_iou: f64,
    pub theta_rec: f64,
    pub k_recall: usize,
    pub w1: f64,
    pub w2: f64,
    pub backend: BackendKind,
    pub selection: SelectionMode,
    pub ablations: Ablations,
    /// Text segmentation of the oracle mock adds a spurious mask per frame.
    pub noisy_segmenter: bool,
    /// Backend calls in flight at once.
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fusion = FusionParams::default();
        PipelineConfig {
            k: fusion.filter.k,
            tau_min: fusion.filter.tau_min,
            rho0: fusion.voting.rho0,
            theta_vis: fusion.voting.theta_vis,
            voting_mode: fusion.voting.mode,
            wilson_z: fusion.voting.z,
            dbscan_eps: fusion.dbscan_eps,
            dbscan_min_pts: fusion.dbscan_min_pts,
            theta_iou: fusion.theta_iou,
            theta_rec: fusion.theta_rec,
            k_recall: DEFAULT_K_RECALL,
            w1: 0.5,
            w2: 0.5,
            backend: BackendKind::MockOracle,
            selection: SelectionMode::Backend,
            ablations: Ablations::default(),
            noisy_segmenter: false,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> afford_core::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("bad config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn depth_filter(&self) -> DepthFilterParams {
        DepthFilterParams {
            k: self.k,
            tau_min: self.tau_min,
        }
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams {
            filter: self.depth_filter(),
            voting: VotingParams {
                rho0: self.rho0,
                theta_vis: self.theta_vis,
                mode: self.voting_mode,
                z: self.wilson_z,
            },
            dbscan_eps: self.dbscan_eps,
            dbscan_min_pts: self.dbscan_min_pts,
            theta_iou: self.theta_iou,
            theta_rec: self.theta_rec,
        }
    }

    pub fn weights(&self) -> ScoreWeights<f64> {
        ScoreWeights {
            centrality: self.w1,
            proximity: self.w2,
        }
    }

    pub fn memory(&self) -> MemoryParams {
        MemoryParams {
            filter: self.depth_filter(),
            weights: self.weights(),
            k_recall: self.k_recall,
        }
    }

    pub fn validate(&self) -> afford_core::Result<()> {
        self.fusion().validate()?;
        if self.k_recall < 1 {
            return Err(Error::Validation("k_recall must be at least 1".into()));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.w1 + self.w2 > 0.0) {
            return Err(Error::Validation("score weights must be non-negative and not both zero".into()));
        }
        if self.concurrency < 1 {
            return Err(Error::Validation("concurrency must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical JSON of the settings that influence artifacts.
    pub fn fingerprint_json(&self) -> String {
        let mut c = self.clone();
        c.concurrency = 0;
        serde_json::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = PipelineConfig::default();
        assert_eq!((c.k, c.tau_min, c.rho0, c.theta_vis), (3.0, 0.05, 0.70, 3));
        assert_eq!((c.dbscan_eps, c.theta_iou, c.theta_rec), (0.03, 0.30, 0.60));
        assert_eq!((c.k_recall, c.w1, c.w2), (20, 0.5, 0.5));
        assert_eq!(c.ablations, Ablations::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"rho0": 0.8, "ablations": {"no_graph": true}}"#).unwrap();
        assert_eq!(c.rho0, 0.8);
        assert!(c.ablations.no_graph && !c.ablations.no_memory);
        assert_eq!(c.k, 3.0);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"rho": 0.8}"#).is_err());
    }

    #[test]
    fn concurrency_does_not_change_fingerprint() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.concurrency = 1;
        assert_eq!(a.fingerprint_json(), b.fingerprint_json());
        b.rho0 = 0.71;
        assert_ne!(a.fingerprint_json(), b.fingerprint_json());
    }
}
