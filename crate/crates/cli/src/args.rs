use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use roiforge_core::Approach;

#[derive(Debug, Parser)]
#[command(name = "roiforge", version, about = "Breast DCE-MRI dataset assembly, volume optimization and evaluation")]
pub struct Cli {
    /// Worker threads for per-patient parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Phantom(PhantomArgs),
    /// Assemble approach datasets from a source cohort.
    Prep(PrepArgs),
    /// Plan the cohort-wide optimized-volume crop.
    Optimize(OptimizeArgs),
    /// Overlay maps, axis histograms, midline profile and pixel budget.
    Analyze(AnalyzeArgs),
    /// Score probability maps against ground-truth lesion masks.
    Evaluate(EvaluateArgs),
    /// Carbon footprint of training runs from timing logs.
    Footprint(FootprintArgs),
    /// Run every stage and write a comparison report.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// JSON phantom spec; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
    /// Grid size as WxHxD.
    #[arg(long, value_parser = parse_shape)]
    pub shape: Option<[usize; 3]>,
    /// Voxel spacing in mm as X,Y,Z.
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<[f64; 3]>,
    /// Lesions per patient as MIN..MAX.
    #[arg(long, value_parser = parse_count_range)]
    pub lesions: Option<(usize, usize)>,
    /// Lesion radius in mm as MIN..MAX.
    #[arg(long, value_parser = parse_float_range)]
    pub radius: Option<(f64, f64)>,
    /// Probability that a lesion is placed in the left breast.
    #[arg(long)]
    pub left_bias: Option<f64>,
    #[arg(long)]
    pub depth_jitter: Option<usize>,
    /// Leave out the bright structure behind the chest line.
    #[arg(long)]
    pub no_heart: bool,
    /// Leave out low-intensity speckle in front of the breasts.
    #[arg(long)]
    pub no_anterior_noise: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write .nii.gz files.
    #[arg(long)]
    pub compress: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["manifest", "scan"]))]
pub struct PrepArgs {
    /// SOURCE manifest of the cohort.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cohort directory of <patient_id>/<series>.nii[.gz] files.
    #[arg(long)]
    pub scan: Option<PathBuf>,
    /// Approaches to build (repeatable); all four by default.
    #[arg(long = "approach", value_parser = parse_approach)]
    pub approaches: Vec<Approach>,
    /// Crop plan for BRS_OV; planned from the cohort when omitted.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = roiforge_core::roi_optimizer::DEFAULT_MULTIPLE)]
    pub multiple: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_subtraction: bool,
    /// Per-volume min-max rescaling of the intensity images.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub compress: bool,
    /// Output root; each approach goes to <out>/<approach>/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Any manifest of the cohort (SOURCE or assembled).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = roiforge_core::roi_optimizer::DEFAULT_MULTIPLE)]
    pub multiple: usize,
    /// Also write per-patient extent reports here.
    #[arg(long)]
    pub extents: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Manifests to analyze (repeatable).
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for PNG renderings.
    #[arg(long)]
    pub plots: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of <patient_id>.nii[.gz] probability maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: a directory of <patient_id>.nii[.gz] masks or a manifest.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = roiforge_core::seg_metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Component volume bin edges in mm³, comma separated.
    #[arg(long, default_value = "10,20")]
    pub bins: String,
    /// Voxel connectivity for components: 6, 18 or 26.
    #[arg(long, default_value = "26", value_parser = ["6", "18", "26"])]
    pub connectivity: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FootprintArgs {
    /// Timing log, optionally LABEL=PATH (repeatable).
    #[arg(long = "log", required = true)]
    pub logs: Vec<String>,
    /// kg CO2 per kWh.
    #[arg(long, default_value_t = roiforge_core::sustainability::DEFAULT_GRID_INTENSITY)]
    pub grid_intensity: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// JSON pipeline config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SOURCE manifest or cohort directory; a phantom is generated otherwise.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Phantom patient count.
    #[arg(long)]
    pub patients: Option<usize>,
    /// Phantom grid size as WxHxD.
    #[arg(long, value_parser = parse_shape)]
    pub shape: Option<[usize; 3]>,
    #[arg(long = "approach", value_parser = parse_approach)]
    pub approaches: Vec<Approach>,
    #[arg(long)]
    pub multiple: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Probability maps for an approach as APPROACH=DIR (repeatable).
    #[arg(long = "pred")]
    pub predictions: Vec<String>,
    /// Training timing log as LABEL=PATH (repeatable).
    #[arg(long = "log")]
    pub logs: Vec<String>,
    #[arg(long)]
    pub plots: bool,
}

fn parse_approach(s: &str) -> Result<Approach, String> {
    s.parse().map_err(|e: roiforge_core::Error| e.to_string())
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let err = || format!("expected WxHxD, got '{s}'");
    if parts.len() != 3 {
        return Err(err());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| err())?;
    }
    Ok(out)
}

fn parse_spacing(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s)?;
    v.try_into().map_err(|_| format!("expected X,Y,Z, got '{s}'"))
}

pub fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect()
}

fn split_range(s: &str) -> Result<(&str, &str), String> {
    match s.split_once("..") {
        Some((a, b)) => Ok((a.trim(), b.trim_start_matches('=').trim())),
        None => Ok((s.trim(), s.trim())),
    }
}

fn parse_count_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = split_range(s)?;
    let err = || format!("expected MIN..MAX, got '{s}'");
    Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
}

fn parse_float_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = split_range(s)?;
    let err = || format!("expected MIN..MAX, got '{s}'");
    Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn value_parsers() {
        assert_eq!(parse_shape("64x64x20"), Ok([64, 64, 20]));
        assert!(parse_shape("64x64").is_err());
        assert_eq!(parse_count_range("1..3"), Ok((1, 3)));
        assert_eq!(parse_count_range("1..=3"), Ok((1, 3)));
        assert_eq!(parse_count_range("2"), Ok((2, 2)));
        assert_eq!(parse_float_range("1.5..4"), Ok((1.5, 4.0)));
        assert_eq!(parse_spacing("1,1,2.5"), Ok([1.0, 1.0, 2.5]));
        assert_eq!(parse_floats("10, 20"), Ok(vec![10.0, 20.0]));
        assert_eq!(parse_approach("ov"), Ok(Approach::BrsOv));
        assert!(parse_approach("xx").is_err());
    }
}
