//! Carbon-footprint accounting for training runs.
//!
//! CFP (kg CO2) = grid intensity (kg/kWh) x training time (h). The
//! normalized score is `1 - (CFP_max - CFP_min) * (CFP / CFP_max)`, applied
//! literally; it mixes a kg-valued range with a ratio and can go negative
//! for ranges above 1 kg. A conventional min-max score is reported next to
//! it for comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seg_metrics::MeanStd;

/// kg CO2 per kWh.
pub const DEFAULT_GRID_INTENSITY: f64 = 0.475;

pub fn carbon_footprint(tt_seconds: f64) -> Result<f64> {
    carbon_footprint_with(tt_seconds, DEFAULT_GRID_INTENSITY)
}

pub fn carbon_footprint_with(tt_seconds: f64, grid_intensity: f64) -> Result<f64> {
    if !(tt_seconds >= 0.0) || !tt_seconds.is_finite() {
        return Err(Error::InvalidInput(format!(
            "training time must be a non-negative number of seconds, got {tt_seconds}"
        )));
    }
    Ok(grid_intensity * tt_seconds / 3600.0)
}

/// Relative slack when checking `cfp_min <= cfp <= cfp_max`.
const RANGE_SLACK: f64 = 1e-12;

pub fn normalized_cfp(cfp: f64, cfp_max: f64, cfp_min: f64) -> Result<f64> {
    if !(cfp_max > 0.0) {
        return Err(Error::InvalidInput(format!("CFP_max must be positive, got {cfp_max}")));
    }
    let slack = RANGE_SLACK * cfp_max;
    if !(cfp_min >= 0.0) || cfp_min > cfp_max + slack {
        return Err(Error::InvalidInput(format!(
            "CFP range [{cfp_min}, {cfp_max}] is invalid"
        )));
    }
    if cfp < cfp_min - slack || cfp > cfp_max + slack {
        return Err(Error::InvalidInput(format!(
            "CFP {cfp} outside [{cfp_min}, {cfp_max}]"
        )));
    }
    Ok(1.0 - (cfp_max - cfp_min) * (cfp / cfp_max))
}

/// Conventional `1 - (cfp - min) / (max - min)`; 1 for a zero range.
pub fn minmax_score(cfp: f64, cfp_max: f64, cfp_min: f64) -> f64 {
    let range = cfp_max - cfp_min;
    if range > 0.0 {
        1.0 - (cfp - cfp_min) / range
    } else {
        1.0
    }
}

/// One line of the trainer's timing log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingLine {
    pub fold: u32,
    pub tt_seconds: f64,
    #[serde(default)]
    pub epochs: Option<u32>,
    #[serde(default)]
    pub best_epoch: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub fold: u32,
    pub tt_seconds: f64,
    pub cfp_kg: f64,
    /// Normalized against the folds of the same log.
    pub norm_cfp: f64,
    /// Conventional min-max score; not part of the reference definition.
    pub minmax_score: f64,
    pub epochs: Option<u32>,
    pub best_epoch: Option<u32>,
}

/// Parses a JSON-lines timing log. Blank lines are skipped; any other
/// malformed line fails with its 1-based line number.
pub fn parse_training_log(text: &str, grid_intensity: f64) -> Result<Vec<EnergyRecord>> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let t: TimingLine = serde_json::from_str(raw).map_err(|e| Error::Log {
            line: line_no,
            reason: e.to_string(),
        })?;
        let cfp = carbon_footprint_with(t.tt_seconds, grid_intensity).map_err(|e| Error::Log {
            line: line_no,
            reason: e.to_string(),
        })?;
        lines.push((t, cfp));
    }
    let max = lines.iter().map(|(_, c)| *c).fold(f64::NEG_INFINITY, f64::max);
    let min = lines.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    lines
        .into_iter()
        .map(|(t, cfp)| {
            // All-zero times form a zero range; treat like equal folds.
            let norm = if max > 0.0 { normalized_cfp(cfp, max, min)? } else { 1.0 };
            Ok(EnergyRecord {
                fold: t.fold,
                tt_seconds: t.tt_seconds,
                cfp_kg: cfp,
                norm_cfp: norm,
                minmax_score: minmax_score(cfp, max, min),
                epochs: t.epochs,
                best_epoch: t.best_epoch,
            })
        })
        .collect()
}

pub fn ingest_training_log(path: impl AsRef<Path>, grid_intensity: f64) -> Result<Vec<EnergyRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_training_log(&text, grid_intensity)
}

/// Per-approach summary: fold statistics and a score normalized across
/// approaches by mean CFP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachFootprint {
    pub label: String,
    pub folds: Vec<EnergyRecord>,
    pub tt_minutes: MeanStd,
    pub cfp_kg: MeanStd,
    pub last_epochs: Option<MeanStd>,
    pub norm_cfp: f64,
    pub minmax_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub grid_intensity_kg_per_kwh: f64,
    pub approaches: Vec<ApproachFootprint>,
    pub notes: Vec<String>,
}

pub fn footprint_report(
    logs: Vec<(String, Vec<EnergyRecord>)>,
    grid_intensity: f64,
) -> Result<FootprintReport> {
    let mut approaches: Vec<ApproachFootprint> = logs
        .into_iter()
        .map(|(label, folds)| {
            let tt: Vec<f64> = folds.iter().map(|r| r.tt_seconds / 60.0).collect();
            let cfp: Vec<f64> = folds.iter().map(|r| r.cfp_kg).collect();
            let epochs: Vec<f64> = folds.iter().filter_map(|r| r.epochs.map(f64::from)).collect();
            ApproachFootprint {
                label,
                tt_minutes: MeanStd::of(&tt),
                cfp_kg: MeanStd::of(&cfp),
                last_epochs: (!epochs.is_empty() && epochs.len() == folds.len()).then(|| MeanStd::of(&epochs)),
                folds,
                norm_cfp: f64::NAN,
                minmax_score: f64::NAN,
            }
        })
        .collect();
    let means: Vec<f64> = approaches
        .iter()
        .map(|a| a.cfp_kg.mean)
        .filter(|m| m.is_finite())
        .collect();
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    for a in approaches.iter_mut().filter(|a| a.cfp_kg.mean.is_finite()) {
        a.norm_cfp = if max > 0.0 { normalized_cfp(a.cfp_kg.mean, max, min)? } else { 1.0 };
        a.minmax_score = minmax_score(a.cfp_kg.mean, max, min);
    }
    let mut notes = vec![
        "norm_cfp = 1 - (CFP_max - CFP_min) * (CFP / CFP_max), applied as defined".to_string(),
        "minmax_score = 1 - (CFP - CFP_min) / (CFP_max - CFP_min) is a conventional alternative, not the reference definition".to_string(),
    ];
    if approaches.iter().any(|a| a.norm_cfp < 0.0 || a.folds.iter().any(|r| r.norm_cfp < 0.0)) {
        notes.push("warning: some norm_cfp values are negative (CFP range exceeds 1 kg)".into());
    }
    Ok(FootprintReport {
        grid_intensity_kg_per_kwh: grid_intensity,
        approaches,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hour_is_intensity() {
        assert!((carbon_footprint(3600.0).unwrap() - 0.475).abs() < 1e-15);
    }

    #[test]
    fn reference_training_times() {
        let wv = carbon_footprint(75.0 * 60.0).unwrap();
        assert!((wv - 0.59375).abs() < 1e-12);
        assert!((wv - 0.59).abs() < 0.005);
        let ov = carbon_footprint(16.0 * 60.0).unwrap();
        assert!((ov - 0.126_666_666_666_666_66).abs() < 1e-12);
        assert!((ov - 0.13).abs() < 0.005);
    }

    #[test]
    fn negative_time_rejected() {
        assert!(carbon_footprint(-1.0).is_err());
        assert!(carbon_footprint(f64::NAN).is_err());
    }

    #[test]
    fn normalized_endpoints() {
        assert_eq!(normalized_cfp(0.3, 0.3, 0.3).unwrap(), 1.0);
        assert!((normalized_cfp(0.59, 0.59, 0.13).unwrap() - (1.0 - 0.46)).abs() < 1e-12);
        let v = normalized_cfp(0.13, 0.59, 0.13).unwrap();
        let expected = 1.0 - 0.46 * (0.13 / 0.59);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.8986).abs() < 1e-4);
    }

    #[test]
    fn normalized_errors() {
        assert!(normalized_cfp(0.0, 0.0, 0.0).is_err());
        assert!(normalized_cfp(0.7, 0.59, 0.13).is_err());
        assert!(normalized_cfp(0.1, 0.59, 0.13).is_err());
    }

    #[test]
    fn log_parsing() {
        let text = (0..5)
            .map(|f| format!(r#"{{"fold":{f},"tt_seconds":{},"epochs":30,"best_epoch":20}}"#, 600 * (f + 1)))
            .collect::<Vec<_>>()
            .join("\n");
        let recs = parse_training_log(&text, DEFAULT_GRID_INTENSITY).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[4].norm_cfp, normalized_cfp(recs[4].cfp_kg, recs[4].cfp_kg, recs[0].cfp_kg).unwrap());
        assert_eq!(recs[0].minmax_score, 1.0);
        assert_eq!(recs[4].minmax_score, 0.0);
        assert!(parse_training_log("", DEFAULT_GRID_INTENSITY).unwrap().is_empty());
        assert!(parse_training_log("\n\n", DEFAULT_GRID_INTENSITY).unwrap().is_empty());
    }

    #[test]
    fn log_errors_carry_line_numbers() {
        let text = "{\"fold\":0,\"tt_seconds\":10}\n{\"fold\":1,\"tt_seconds\":-5}\n";
        match parse_training_log(text, DEFAULT_GRID_INTENSITY) {
            Err(Error::Log { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_training_log("{\"fold\":0,\"tt_seconds\":10}\nnot json", DEFAULT_GRID_INTENSITY) {
            Err(Error::Log { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_times_do_not_divide_by_zero() {
        let recs = parse_training_log("{\"fold\":0,\"tt_seconds\":0}", DEFAULT_GRID_INTENSITY).unwrap();
        assert_eq!(recs[0].norm_cfp, 1.0);
    }

    #[test]
    fn report_across_approaches() {
        let mk = |label: &str, mins: &[f64]| {
            let text: String = mins
                .iter()
                .enumerate()
                .map(|(i, m)| format!("{{\"fold\":{i},\"tt_seconds\":{}}}\n", m * 60.0))
                .collect();
            (label.to_string(), parse_training_log(&text, DEFAULT_GRID_INTENSITY).unwrap())
        };
        let r = footprint_report(vec![mk("WV", &[75.0, 75.0]), mk("OV", &[16.0])], DEFAULT_GRID_INTENSITY).unwrap();
        assert_eq!(r.approaches[0].norm_cfp, 1.0 - (0.59375 - 0.475 * 16.0 / 60.0));
        assert!(r.approaches[1].norm_cfp > r.approaches[0].norm_cfp);
        assert!(r.approaches[0].last_epochs.is_none());
    }

    proptest! {
        #[test]
        fn cfp_linear_monotone_and_rank_preserving(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let (ca, cb) = (carbon_footprint(a).unwrap(), carbon_footprint(b).unwrap());
            prop_assert!((carbon_footprint(a + b).unwrap() - (ca + cb)).abs() <= 1e-9 * (1.0 + ca + cb));
            prop_assert_eq!(a < b, ca < cb);
        }

        #[test]
        fn norm_non_increasing_in_cfp(min in 0.0f64..1.0, span in 0.0f64..2.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let max = min + span;
            prop_assume!(max > 0.0);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let c_lo = min + lo * span;
            let c_hi = min + hi * span;
            prop_assert!(normalized_cfp(c_hi, max, min).unwrap() <= normalized_cfp(c_lo, max, min).unwrap());
        }
    }
}
