//! Per-patient evaluation of probability volumes against ground truth and
//! cohort averages.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binarize, component_analysis, confusion, ComponentReport, ConfusionCounts, Connectivity, VolumeBins};
use crate::error::{Error, Result};
use crate::volume_io::{load_mask, load_volume, CohortManifest, MaskGrid, VolumeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSettings {
    pub threshold: f64,
    pub bins: VolumeBins,
    pub connectivity: Connectivity,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            threshold: super::DEFAULT_THRESHOLD,
            bins: VolumeBins::default(),
            connectivity: Connectivity::TwentySix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub components: ComponentReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Unweighted mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dice: MeanStd,
    pub iou: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub settings: EvaluationSettings,
    pub averaging: String,
    pub patients: Vec<PatientMetrics>,
    pub average: MetricSummary,
    pub bin_labels: Vec<String>,
    pub fp_bin_totals: Vec<usize>,
    pub fn_bin_totals: Vec<usize>,
}

pub fn evaluate_case(
    patient_id: &str,
    prob: &VolumeGrid,
    gt: &MaskGrid,
    settings: &EvaluationSettings,
) -> Result<PatientMetrics> {
    let pred = binarize(prob, settings.threshold)?;
    let counts = confusion(&pred, gt)?;
    let components = component_analysis(
        &pred,
        gt,
        Some(settings.threshold),
        &settings.bins,
        settings.connectivity,
    )?;
    Ok(PatientMetrics {
        patient_id: patient_id.to_string(),
        counts,
        dice: counts.dice(),
        iou: counts.iou(),
        precision: counts.precision(),
        recall: counts.recall(),
        components,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionPair {
    pub patient_id: String,
    pub prediction: PathBuf,
    pub ground_truth: PathBuf,
}

fn nifti_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .map(str::to_string)
}

fn list_nifti(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter_map(|p| nifti_stem(&p).map(|s| (s, p)))
        .collect();
    out.sort();
    Ok(out)
}

/// Pairs `<pred_dir>/<id>.nii[.gz]` with ground truth taken either from a
/// directory of `<id>.nii[.gz]` files or from the lesion masks of a
/// manifest. Every prediction needs a ground truth.
pub fn discover_pairs(pred_dir: &Path, gt: &Path) -> Result<Vec<PredictionPair>> {
    let preds = list_nifti(pred_dir)?;
    if preds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no NIfTI predictions in {}",
            pred_dir.display()
        )));
    }
    let lookup: Vec<(String, PathBuf)> = if gt.is_dir() {
        list_nifti(gt)?
    } else {
        let m = CohortManifest::read(gt)?;
        m.patients
            .iter()
            .map(|p| (p.patient_id.clone(), m.resolve(&p.lesion_mask)))
            .collect()
    };
    preds
        .into_iter()
        .map(|(id, prediction)| {
            let gt_path = lookup
                .iter()
                .find(|(gid, _)| *gid == id)
                .map(|(_, p)| p.clone())
                .ok_or_else(|| Error::InvalidInput(format!("no ground truth for prediction '{id}'")))?;
            Ok(PredictionPair {
                patient_id: id,
                prediction,
                ground_truth: gt_path,
            })
        })
        .collect()
}

pub fn evaluate_pairs(pairs: &[PredictionPair], settings: &EvaluationSettings) -> Result<EvaluationReport> {
    let patients = pairs
        .par_iter()
        .map(|p| {
            let prob = load_volume(&p.prediction)?;
            let gt = load_mask(&p.ground_truth)?;
            evaluate_case(&p.patient_id, &prob, &gt, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(patients, settings))
}

fn summarize(patients: Vec<PatientMetrics>, settings: &EvaluationSettings) -> EvaluationReport {
    let col = |f: fn(&PatientMetrics) -> f64| MeanStd::of(&patients.iter().map(f).collect::<Vec<_>>());
    let average = MetricSummary {
        dice: col(|p| p.dice),
        iou: col(|p| p.iou),
        precision: col(|p| p.precision),
        recall: col(|p| p.recall),
    };
    let nbins = settings.bins.len();
    let mut fp_bin_totals = vec![0; nbins];
    let mut fn_bin_totals = vec![0; nbins];
    for p in &patients {
        for i in 0..nbins {
            fp_bin_totals[i] += p.components.fp_bin_counts[i];
            fn_bin_totals[i] += p.components.fn_bin_counts[i];
        }
    }
    EvaluationReport {
        settings: settings.clone(),
        averaging: "unweighted mean over patients".into(),
        patients,
        average,
        bin_labels: settings.bins.labels(),
        fp_bin_totals,
        fn_bin_totals,
    }
}
