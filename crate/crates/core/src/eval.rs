//! Single-prediction AP/AR at IoU 0.25/0.50 and mean IoU over 3D masks.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointset::PointSet;

pub fn mask_iou_3d(a: &PointSet, b: &PointSet) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    #[serde(default)]
    pub scene_id: String,
    pub predicted: Option<PointSet>,
    pub ground_truth: PointSet,
    pub iou: f64,
}

impl EvalRecord {
    pub fn new(
        query_id: impl Into<String>,
        scene_id: impl Into<String>,
        predicted: Option<PointSet>,
        ground_truth: PointSet,
    ) -> Self {
        let iou = predicted
            .as_ref()
            .map_or(0.0, |p| mask_iou_3d(p, &ground_truth));
        EvalRecord {
            query_id: query_id.into(),
            scene_id: scene_id.into(),
            predicted,
            ground_truth,
            iou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ap25: f64,
    pub ap50: f64,
    pub ar25: f64,
    pub ar50: f64,
    pub miou: f64,
    pub count: usize,
}

/// With one unscored prediction per query, precision and recall at a
/// threshold both reduce to the fraction of queries reaching it.
pub fn compute_metrics(records: &[EvalRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Contract("metrics need at least one record".into()));
    }
    let n = records.len() as f64;
    let frac = |t: f64| records.iter().filter(|r| r.iou >= t).count() as f64 / n;
    let (p25, p50) = (frac(0.25), frac(0.50));
    Ok(Metrics {
        ap25: p25,
        ap50: p50,
        ar25: p25,
        ar50: p50,
        miou: records.iter().map(|r| r.iou).sum::<f64>() / n,
        count: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Every query weighted equally.
    pub per_query: Metrics,
    /// Metrics computed per scene, then averaged with equal scene weight.
    pub per_scene_mean: Metrics,
    pub per_scene: BTreeMap<String, Metrics>,
    pub records: Vec<EvalRecord>,
}

pub fn build_report(records: Vec<EvalRecord>) -> Result<MetricsReport> {
    let per_query = compute_metrics(&records)?;
    let mut groups: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(r.scene_id.clone()).or_default().push(r.clone());
    }
    let per_scene: BTreeMap<String, Metrics> = groups
        .iter()
        .map(|(k, v)| Ok((k.clone(), compute_metrics(v)?)))
        .collect::<Result<_>>()?;
    let s = per_scene.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| per_scene.values().map(f).sum::<f64>() / s;
    let per_scene_mean = Metrics {
        ap25: mean(|m| m.ap25),
        ap50: mean(|m| m.ap50),
        ar25: mean(|m| m.ar25),
        ar50: mean(|m| m.ar50),
        miou: mean(|m| m.miou),
        count: records.len(),
    };
    Ok(MetricsReport {
        per_query,
        per_scene_mean,
        per_scene,
        records,
    })
}

/// Aligned plain-text table of a report.
pub fn format_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>6} {:>6} {:>6} {:>6} {:>6} {:>5}",
        "scope", "AP25", "AP50", "AR25", "AR50", "mIoU", "n"
    );
    let mut row = |name: &str, m: &Metrics| {
        let _ = writeln!(
            s,
            "{:<24} {:>6.4} {:>6.4} {:>6.4} {:>6.4} {:>6.4} {:>5}",
            name, m.ap25, m.ap50, m.ar25, m.ar50, m.miou, m.count
        );
    };
    row("all (per query)", &report.per_query);
    row("all (per scene mean)", &report.per_scene_mean);
    for (scene, m) in &report.per_scene {
        row(scene, m);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iou: f64) -> EvalRecord {
        EvalRecord {
            query_id: "q".into(),
            scene_id: "s".into(),
            predicted: None,
            ground_truth: PointSet::new(),
            iou,
        }
    }

    #[test]
    fn iou_examples() {
        let a: PointSet = (0..10).collect();
        let b: PointSet = (5..15).collect();
        assert_eq!(mask_iou_3d(&a, &a), 1.0);
        assert_eq!(mask_iou_3d(&a, &(20..30).collect()), 0.0);
        assert!((mask_iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(mask_iou_3d(&PointSet::new(), &PointSet::new()), 0.0);
    }

    #[test]
    fn missing_prediction_scores_zero() {
        let r = EvalRecord::new("q", "s", None, PointSet::new());
        assert_eq!(r.iou, 0.0);
    }

    #[test]
    fn straddling_threshold() {
        let m = compute_metrics(&[rec(0.3)]).unwrap();
        assert_eq!((m.ap25, m.ap50, m.miou), (1.0, 0.0, 0.3));
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn scene_mean_weights_scenes_equally() {
        let mut a = rec(1.0);
        a.scene_id = "a".into();
        let mut b1 = rec(0.0);
        b1.scene_id = "b".into();
        let b2 = EvalRecord { query_id: "q2".into(), ..b1.clone() };
        let r = build_report(vec![a, b1, b2]).unwrap();
        assert!((r.per_query.miou - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.per_scene_mean.miou - 0.5).abs() < 1e-12);
        assert!(format_table(&r).contains("per scene mean"));
    }
}
