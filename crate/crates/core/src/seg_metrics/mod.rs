//! Voxelwise overlap metrics and lesion-level error analysis.

mod components;
mod evaluate;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

pub use components::{
    component_analysis, label_components, Component, ComponentReport, Connectivity, VolumeBins,
};
pub use evaluate::{
    discover_pairs, evaluate_case, evaluate_pairs, EvaluationReport, EvaluationSettings,
    MeanStd, MetricSummary, PatientMetrics, PredictionPair,
};

use crate::error::{Error, Result};
use crate::volume_io::{check_same_geometry, MaskGrid, VolumeGrid};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `1` where `prob >= threshold`.
pub fn binarize(prob: &VolumeGrid, threshold: f64) -> Result<MaskGrid> {
    if let Some(v) = prob.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "probability {v} outside [0, 1]"
        )));
    }
    Ok(MaskGrid::from_volume(prob, |v| f64::from(v) >= threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// `num / den`, or 1 when both prediction and truth are empty.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// 2TP / (2TP + FP + FN)
    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// TP / (TP + FP + FN)
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    /// TP / (TP + FP)
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// TP / (TP + FN)
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    c.dice()
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    c.iou()
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    c.precision()
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    c.recall()
}

pub fn confusion(pred: &MaskGrid, gt: &MaskGrid) -> Result<ConfusionCounts> {
    check_same_geometry(pred, gt, "confusion counts")?;
    let mut c = ConfusionCounts::default();
    Zip::from(&pred.data).and(&gt.data).for_each(|&p, &g| match (p, g) {
        (1, 1) => c.tp += 1,
        (1, _) => c.fp += 1,
        (_, 1) => c.fn_ += 1,
        _ => c.tn += 1,
    });
    Ok(c)
}
