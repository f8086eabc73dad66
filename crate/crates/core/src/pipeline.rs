//! End-to-end run: cohort → assembled approaches → crop plan → analytics
//! → optional evaluation and footprint → one comparison report.
//!
//! `report.json` depends only on the semantic settings and the data, so two
//! runs with the same settings produce identical bytes. Paths and
//! timestamps go to `provenance.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::cohort_analytics::{analyze_manifest, pixel_budget, render_plots, AnalyticsReport, PixelBudget};
use crate::cohort_prep::{assemble_approach, scan_cohort_dir, sls_extent_reports, AssembleParams, ExclusionRecord, PatientCase};
use crate::error::{Error, Result};
use crate::phantom::{generate_cohort, PhantomSpec};
use crate::roi_optimizer::{plan_crop, CropPlan, ExtentReport, DEFAULT_MULTIPLE};
use crate::seg_metrics::{discover_pairs, evaluate_pairs, EvaluationReport, EvaluationSettings};
use crate::sustainability::{footprint_report, ingest_training_log, FootprintReport, DEFAULT_GRID_INTENSITY};
use crate::volume_io::{load_mask, Approach, CohortManifest};

/// Settings that change results. Echoed verbatim into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub seed: u64,
    pub approaches: Vec<Approach>,
    /// Used when no source cohort is given. Its seed is replaced by `seed`.
    pub phantom: PhantomSpec,
    pub multiple: usize,
    pub include_subtraction: bool,
    pub normalize: bool,
    pub compress: bool,
    pub evaluation: EvaluationSettings,
    pub grid_intensity: f64,
    pub plots: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            seed: 0,
            approaches: Approach::ASSEMBLED.to_vec(),
            phantom: PhantomSpec::default(),
            multiple: DEFAULT_MULTIPLE,
            include_subtraction: true,
            normalize: false,
            compress: false,
            evaluation: EvaluationSettings::default(),
            grid_intensity: DEFAULT_GRID_INTENSITY,
            plots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub settings: PipelineSettings,
    pub out: PathBuf,
    /// A `SOURCE` manifest or a cohort directory; a phantom is generated
    /// when absent.
    pub source: Option<PathBuf>,
    /// Per-approach directories of `<patient_id>.nii[.gz]` probability maps.
    pub predictions: BTreeMap<Approach, PathBuf>,
    /// Label → trainer timing log (JSON lines).
    pub training_logs: BTreeMap<String, PathBuf>,
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Checks every referenced path and setting before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        if s.approaches.is_empty() {
            return Err(Error::InvalidInput("no approaches selected".into()));
        }
        if let Some(a) = s.approaches.iter().find(|a| **a == Approach::Source) {
            return Err(Error::InvalidInput(format!("{a} is not an assembled approach")));
        }
        if s.multiple == 0 {
            return Err(Error::InvalidInput("crop multiple must be positive".into()));
        }
        if !(0.0..=1.0).contains(&s.evaluation.threshold) {
            return Err(Error::InvalidInput(format!(
                "threshold {} outside [0, 1]",
                s.evaluation.threshold
            )));
        }
        if !(s.grid_intensity >= 0.0) {
            return Err(Error::InvalidInput("grid intensity must be non-negative".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::InvalidInput("no output directory given".into()));
        }
        match &self.source {
            Some(p) if !p.exists() => return Err(Error::NotFound(p.clone())),
            None => {
                let mut spec = s.phantom.clone();
                spec.seed = s.seed;
                spec.validate()?;
            }
            _ => {}
        }
        for (a, p) in &self.predictions {
            if !s.approaches.contains(a) {
                return Err(Error::InvalidInput(format!("predictions given for unselected approach {a}")));
            }
            if !p.is_dir() {
                return Err(Error::NotFound(p.clone()));
            }
        }
        for p in self.training_logs.values() {
            if !p.is_file() {
                return Err(Error::NotFound(p.clone()));
            }
        }
        Ok(())
    }
}

/// Loads a cohort from a `SOURCE` manifest file or a directory of
/// `<patient_id>/*.nii[.gz]` series.
pub fn load_source(path: &Path) -> Result<(String, Vec<PatientCase>, Vec<ExclusionRecord>)> {
    if path.is_dir() {
        let (sources, excluded) = scan_cohort_dir(path)?;
        let cases = sources.iter().map(PatientCase::load).collect::<Result<Vec<_>>>()?;
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("cohort")
            .to_string();
        Ok((id, cases, excluded))
    } else {
        let m = CohortManifest::read(path)?;
        m.validate()?;
        let cases = m
            .patients
            .iter()
            .map(|e| PatientCase::load_entry(&m, e))
            .collect::<Result<Vec<_>>>()?;
        Ok((m.cohort_id.clone(), cases, m.exclusions.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtentSummary {
    pub patient_id: String,
    pub y_min: usize,
    pub y_max: usize,
    pub chest_line: usize,
    pub required_height: usize,
}

impl From<&ExtentReport> for ExtentSummary {
    fn from(r: &ExtentReport) -> Self {
        ExtentSummary {
            patient_id: r.patient_id.clone(),
            y_min: r.y_min,
            y_max: r.y_max,
            chest_line: r.chest_line,
            required_height: r.required_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub approach: Approach,
    pub patients: usize,
    /// `[W, H, D]` shared by every patient.
    pub shape: Option<[usize; 3]>,
    pub h_max_mid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineChecks {
    /// Per-patient voxel counts strictly decrease WV > SLS > OV.
    pub voxel_budget_ordering: Option<bool>,
    /// `H_max_mid` ordering OV <= SLS <= WV.
    pub h_max_mid_ordering: Option<bool>,
    /// OV keeps every region and lesion voxel of SLS.
    pub lossless_crop: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub settings: PipelineSettings,
    pub cohort_id: String,
    pub patients: Vec<String>,
    pub exclusions: Vec<ExclusionRecord>,
    pub extents: Vec<ExtentSummary>,
    pub crop_plan: Option<CropPlan>,
    pub shapes: Vec<ShapeRow>,
    pub pixel_budget: PixelBudget,
    pub analytics: Vec<AnalyticsReport>,
    pub evaluation: BTreeMap<Approach, EvaluationReport>,
    pub footprint: Option<FootprintReport>,
    pub checks: PipelineChecks,
}

#[derive(Debug, Clone, Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    started_unix_s: u64,
    finished_unix_s: u64,
    outputs: BTreeMap<String, PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `<out>/<approach in lower case>`.
pub fn approach_dir(out: &Path, a: Approach) -> PathBuf {
    out.join(a.as_str().to_ascii_lowercase())
}

/// Region and lesion voxel counts per patient, read back from disk.
fn mask_counts(m: &CohortManifest) -> Result<Vec<(usize, usize)>> {
    m.patients
        .iter()
        .map(|p| {
            let r = load_mask(m.resolve(&p.region_mask))?.count();
            let l = load_mask(m.resolve(&p.lesion_mask))?.count();
            Ok((r, l))
        })
        .collect()
}

fn ordered(values: &[Option<u64>], strict: bool) -> Option<bool> {
    let v: Vec<u64> = values.iter().copied().collect::<Option<_>>()?;
    Some(v.windows(2).all(|w| if strict { w[0] > w[1] } else { w[0] >= w[1] }))
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let started = unix_now();
    let s = &config.settings;
    let out = &config.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outputs = BTreeMap::new();

    let (cohort_id, cases, exclusions) = match &config.source {
        Some(src) => load_source(src)?,
        None => {
            let mut spec = s.phantom.clone();
            spec.seed = s.seed;
            let dir = out.join("source");
            let m = generate_cohort(&spec, &dir)?;
            outputs.insert("source".into(), dir.join("manifest.json"));
            log::info!("generated phantom cohort with {} patients", m.patients.len());
            load_source(&dir.join("manifest.json"))?
        }
    };
    if cases.is_empty() {
        return Err(Error::InvalidInput("cohort has no usable patients".into()));
    }

    let needs_sls = s.approaches.iter().any(|a| matches!(a, Approach::BrsSls | Approach::BrsOv));
    let extents = if needs_sls { sls_extent_reports(&cases)? } else { Vec::new() };
    let crop_plan = if s.approaches.contains(&Approach::BrsOv) {
        let plan = plan_crop(&extents, s.multiple)?;
        let path = out.join("crop_plan.json");
        write_json(&plan, &path)?;
        outputs.insert("crop_plan".into(), path);
        Some(plan)
    } else {
        None
    };

    let mut approaches = s.approaches.clone();
    approaches.sort();
    approaches.dedup();
    let mut manifests = Vec::new();
    for &a in &approaches {
        let params = AssembleParams {
            cohort_id: format!("{cohort_id}_{}", a.as_str().to_ascii_lowercase()),
            crop_plan: crop_plan.clone(),
            include_subtraction: s.include_subtraction,
            normalize: s.normalize,
            compress: s.compress,
        };
        let dir = approach_dir(out, a);
        let m = assemble_approach(&cases, a, &params, s.seed, &dir)?;
        log::info!("assembled {a}: {:?}", m.uniform_shape());
        outputs.insert(format!("manifest_{}", a.as_str()), dir.join("manifest.json"));
        manifests.push(m);
    }
    drop(cases);

    let mut analytics = Vec::new();
    for m in &manifests {
        let (report, map) = analyze_manifest(m)?;
        let dir = approach_dir(out, m.approach);
        write_json(&report, &dir.join("analytics.json"))?;
        if s.plots {
            render_plots(&map, &report, &dir.join("plots"))?;
        }
        analytics.push(report);
    }
    let budget = pixel_budget(&manifests);

    let shapes: Vec<ShapeRow> = manifests
        .iter()
        .zip(&analytics)
        .map(|(m, r)| ShapeRow {
            approach: m.approach,
            patients: m.patients.len(),
            shape: m.uniform_shape(),
            h_max_mid: r.midline.h_max_mid,
        })
        .collect();

    let find = |a: Approach| manifests.iter().position(|m| m.approach == a);
    let chain: Vec<usize> = [Approach::BrsWv, Approach::BrsSls, Approach::BrsOv]
        .into_iter()
        .filter_map(find)
        .collect();
    let checks = if chain.len() == 3 {
        let voxels: Vec<Option<u64>> = chain
            .iter()
            .map(|&i| manifests[i].uniform_shape().map(|s| s.iter().map(|&n| n as u64).product()))
            .collect();
        let hmax: Vec<Option<u64>> = chain.iter().map(|&i| Some(analytics[i].midline.h_max_mid as u64)).collect();
        let lossless = mask_counts(&manifests[chain[1]])? == mask_counts(&manifests[chain[2]])?;
        PipelineChecks {
            voxel_budget_ordering: ordered(&voxels, true),
            h_max_mid_ordering: ordered(&hmax, false),
            lossless_crop: Some(lossless),
        }
    } else {
        PipelineChecks { voxel_budget_ordering: None, h_max_mid_ordering: None, lossless_crop: None }
    };

    let mut evaluation = BTreeMap::new();
    for (&a, pred_dir) in &config.predictions {
        let dir = approach_dir(out, a);
        let pairs = discover_pairs(pred_dir, &dir.join("manifest.json"))?;
        let report = evaluate_pairs(&pairs, &s.evaluation)?;
        write_json(&report, &dir.join("evaluation.json"))?;
        evaluation.insert(a, report);
    }

    let footprint = if config.training_logs.is_empty() {
        None
    } else {
        let logs = config
            .training_logs
            .iter()
            .map(|(label, p)| Ok((label.clone(), ingest_training_log(p, s.grid_intensity)?)))
            .collect::<Result<Vec<_>>>()?;
        Some(footprint_report(logs, s.grid_intensity)?)
    };

    let report = PipelineReport {
        settings: s.clone(),
        cohort_id,
        patients: manifests
            .first()
            .map(|m| m.patients.iter().map(|p| p.patient_id.clone()).collect())
            .unwrap_or_default(),
        exclusions,
        extents: extents.iter().map(ExtentSummary::from).collect(),
        crop_plan,
        shapes,
        pixel_budget: budget,
        analytics,
        evaluation,
        footprint,
        checks,
    };
    let report_path = out.join("report.json");
    write_json(&report, &report_path)?;
    outputs.insert("report".into(), report_path);

    let provenance = Provenance {
        tool: "roiforge",
        version: env!("CARGO_PKG_VERSION"),
        config,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        outputs,
    };
    write_json(&provenance, &out.join("provenance.json"))?;
    Ok(report)
}
