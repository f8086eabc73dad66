use std::path::{Path, PathBuf};

use roiforge_core::cohort_analytics::{analyze_manifest, pixel_budget, render_plots, AnalyticsReport, PixelBudget};
use roiforge_core::cohort_prep::{assemble_approach, sls_extent_reports, AssembleParams};
use roiforge_core::phantom::generate_cohort;
use roiforge_core::pipeline::{approach_dir, load_source, read_json, run_pipeline, write_json};
use roiforge_core::roi_optimizer::plan_crop;
use roiforge_core::seg_metrics::{discover_pairs, evaluate_pairs, Connectivity, EvaluationSettings, VolumeBins};
use roiforge_core::sustainability::{footprint_report, ingest_training_log};
use roiforge_core::{Approach, CohortManifest, CropPlan, Error, PhantomSpec, PipelineConfig};
use serde::Serialize;

use crate::args::*;

pub enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Phantom(a) => phantom(a),
        Command::Prep(a) => prep(a),
        Command::Optimize(a) => optimize(a),
        Command::Analyze(a) => analyze(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Footprint(a) => footprint(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

/// Splits `KEY=VALUE`; without `=` the key comes from `default_key`.
fn key_value(s: &str, default_key: impl Fn(&Path) -> Option<String>) -> Result<(String, PathBuf), Failure> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        Some(_) => Err(Failure::Usage(format!("expected KEY=PATH, got '{s}'"))),
        None => {
            let p = PathBuf::from(s);
            let k = default_key(&p).ok_or_else(|| Failure::Usage(format!("cannot derive a label from '{s}'")))?;
            Ok((k, p))
        }
    }
}

fn phantom(a: PhantomArgs) -> Outcome {
    let mut spec: PhantomSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(n) = a.patients {
        spec.patients = n;
    }
    if let Some(s) = a.shape {
        spec.shape = s;
    }
    if let Some(s) = a.spacing {
        spec.spacing = s;
    }
    if let Some((lo, hi)) = a.lesions {
        spec.lesions.count_min = lo;
        spec.lesions.count_max = hi;
    }
    if let Some((lo, hi)) = a.radius {
        spec.lesions.radius_min_mm = lo;
        spec.lesions.radius_max_mm = hi;
    }
    if let Some(b) = a.left_bias {
        spec.lesions.left_bias = b;
    }
    if let Some(j) = a.depth_jitter {
        spec.depth_jitter = j;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.heart &= !a.no_heart;
    spec.anterior_noise &= !a.no_anterior_noise;
    spec.compress |= a.compress;
    let m = generate_cohort(&spec, &a.out)?;
    println!("wrote {} patients to {}", m.patients.len(), a.out.join("manifest.json").display());
    Ok(())
}

fn prep(a: PrepArgs) -> Outcome {
    let source = a.manifest.as_ref().or(a.scan.as_ref()).expect("clap enforces one input");
    let (cohort_id, cases, exclusions) = load_source(source)?;
    for x in &exclusions {
        log::warn!("excluded {}: {}", x.patient_id, x.reason);
    }
    let mut approaches = if a.approaches.is_empty() { Approach::ASSEMBLED.to_vec() } else { a.approaches };
    approaches.sort();
    approaches.dedup();
    if approaches.contains(&Approach::Source) {
        return Err(Failure::Usage("SOURCE is not an assembled approach".into()));
    }
    let crop_plan = if approaches.contains(&Approach::BrsOv) {
        Some(match &a.plan {
            Some(p) => read_json::<CropPlan>(p)?,
            None => plan_crop(&sls_extent_reports(&cases)?, a.multiple)?,
        })
    } else {
        None
    };
    for approach in approaches {
        let params = AssembleParams {
            cohort_id: format!("{cohort_id}_{}", approach.as_str().to_ascii_lowercase()),
            crop_plan: crop_plan.clone(),
            include_subtraction: !a.no_subtraction,
            normalize: a.normalize,
            compress: a.compress,
        };
        let dir = approach_dir(&a.out, approach);
        let mut m = assemble_approach(&cases, approach, &params, a.seed, &dir)?;
        if !exclusions.is_empty() {
            m.exclusions = exclusions.clone();
            m.write(dir.join("manifest.json"))?;
        }
        let shape = m.uniform_shape().map(|s| format!("{}x{}x{}", s[0], s[1], s[2])).unwrap_or_default();
        println!("{approach}: {} patients, {shape} -> {}", m.patients.len(), dir.join("manifest.json").display());
    }
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Outcome {
    let (_, cases, _) = load_source(&a.manifest)?;
    let reports = sls_extent_reports(&cases)?;
    let plan = plan_crop(&reports, a.multiple)?;
    write_json(&plan, &a.out)?;
    if let Some(p) = &a.extents {
        write_json(&reports, p)?;
    }
    println!(
        "required height {} px, crop height {} px, safe distance {} px ({:.1} mm)",
        plan.required_height, plan.crop_height, plan.safe_distance_px, plan.safe_distance_mm
    );
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput {
    analytics: Vec<AnalyticsReport>,
    pixel_budget: PixelBudget,
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let mut manifests = Vec::new();
    let mut analytics = Vec::new();
    let several = a.manifests.len() > 1;
    for path in &a.manifests {
        let m = CohortManifest::read(path)?;
        m.validate()?;
        let (report, map) = analyze_manifest(&m)?;
        if let Some(dir) = &a.plots {
            let dir = if several { approach_dir(dir, m.approach) } else { dir.clone() };
            render_plots(&map, &report, &dir)?;
        }
        println!("{}: H_max_mid {} px over {} slices", m.approach, report.midline.h_max_mid, report.slices);
        analytics.push(report);
        manifests.push(m);
    }
    let out = AnalyzeOutput { pixel_budget: pixel_budget(&manifests), analytics };
    write_json(&out, &a.out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let edges = parse_floats(&a.bins).map_err(Failure::Usage)?;
    let connectivity = match a.connectivity.as_str() {
        "6" => Connectivity::Six,
        "18" => Connectivity::Eighteen,
        _ => Connectivity::TwentySix,
    };
    let settings = EvaluationSettings {
        threshold: a.threshold,
        bins: VolumeBins::new(edges)?,
        connectivity,
    };
    let pairs = discover_pairs(&a.pred, &a.gt)?;
    let report = evaluate_pairs(&pairs, &settings)?;
    write_json(&report, &a.out)?;
    println!(
        "{} patients: Dice {:.4} ± {:.4}, IoU {:.4} ± {:.4}",
        report.patients.len(),
        report.average.dice.mean,
        report.average.dice.std,
        report.average.iou.mean,
        report.average.iou.std
    );
    Ok(())
}

fn log_label(p: &Path) -> Option<String> {
    let name = p.file_name()?.to_str()?;
    Some(name.split('.').next().unwrap_or(name).to_string())
}

fn footprint(a: FootprintArgs) -> Outcome {
    let mut logs = Vec::new();
    for s in &a.logs {
        let (label, path) = key_value(s, log_label)?;
        logs.push((label, ingest_training_log(&path, a.grid_intensity)?));
    }
    let report = footprint_report(logs, a.grid_intensity)?;
    write_json(&report, &a.out)?;
    for ap in &report.approaches {
        println!(
            "{}: {:.1} min, {:.4} kg CO2, Norm_CFP {:.4}",
            ap.label, ap.tt_minutes.mean, ap.cfp_kg.mean, ap.norm_cfp
        );
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Outcome {
    let mut config = match &a.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = a.out {
        config.out = out;
    }
    if config.out.as_os_str().is_empty() {
        return Err(Failure::Usage("an output directory is required (--out or \"out\" in --config)".into()));
    }
    if let Some(src) = a.source {
        config.source = Some(src);
    }
    let s = &mut config.settings;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(n) = a.patients {
        s.phantom.patients = n;
    }
    if let Some(shape) = a.shape {
        s.phantom.shape = shape;
    }
    if !a.approaches.is_empty() {
        s.approaches = a.approaches;
    }
    if let Some(m) = a.multiple {
        s.multiple = m;
    }
    if let Some(t) = a.threshold {
        s.evaluation.threshold = t;
    }
    s.plots |= a.plots;
    for p in &a.predictions {
        let (k, dir) = key_value(p, |_| None)?;
        let approach: Approach = k.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
        config.predictions.insert(approach, dir);
    }
    for l in &a.logs {
        let (k, path) = key_value(l, log_label)?;
        config.training_logs.insert(k, path);
    }

    let report = run_pipeline(&config)?;
    println!("{:<8} {:>8} {:>12} {:>10}", "approach", "patients", "shape", "H_max_mid");
    for row in &report.shapes {
        let shape = row.shape.map(|s| format!("{}x{}x{}", s[0], s[1], s[2])).unwrap_or_else(|| "mixed".into());
        println!("{:<8} {:>8} {:>12} {:>10}", row.approach.as_str(), row.patients, shape, row.h_max_mid);
    }
    if let Some(plan) = &report.crop_plan {
        println!("crop height {} px (required {}, safe distance {} px)", plan.crop_height, plan.required_height, plan.safe_distance_px);
    }
    println!("report: {}", config.out.join("report.json").display());
    Ok(())
}
