//! Identification of each patient's contrast series and masks, with
//! exclusion records for incomplete patients.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesRole {
    PreContrast,
    FirstPostContrast,
    RegionMask,
    LesionMask,
}

impl SeriesRole {
    pub const REQUIRED: [SeriesRole; 4] = [
        SeriesRole::PreContrast,
        SeriesRole::FirstPostContrast,
        SeriesRole::RegionMask,
        SeriesRole::LesionMask,
    ];

    fn label(self) -> &'static str {
        match self {
            SeriesRole::PreContrast => "pre-contrast",
            SeriesRole::FirstPostContrast => "first post-contrast",
            SeriesRole::RegionMask => "region mask",
            SeriesRole::LesionMask => "lesion mask",
        }
    }
}

impl fmt::Display for SeriesRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A file offered for a patient together with its series description
/// (DICOM SeriesDescription or, for converted files, the file stem).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesCandidate {
    pub descriptor: String,
    pub path: PathBuf,
}

/// Guesses the role of a series from its description. Later
/// post-contrast phases and unrelated series return `None`.
pub fn classify_descriptor(descriptor: &str) -> Option<SeriesRole> {
    let lower = descriptor.to_ascii_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let joined: String = tokens.concat();
    let has = |t: &str| tokens.contains(&t);

    if ["lesion", "lesions", "label", "labels", "gt", "annotation", "tumor", "tumour"]
        .iter()
        .any(|t| has(t))
    {
        return Some(SeriesRole::LesionMask);
    }
    if has("brs") || has("region") || joined.contains("breastmask") || joined.contains("breastregion") {
        return Some(SeriesRole::RegionMask);
    }
    if joined.contains("precontrast") || has("pre") || has("pc") || has("ph0") {
        return Some(SeriesRole::PreContrast);
    }
    if joined.contains("firstpost")
        || joined.contains("1stpost")
        || joined.contains("postcontrast1")
        || joined.contains("post1")
        || has("fpc")
        || has("ph1")
    {
        return Some(SeriesRole::FirstPostContrast);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "roles", rename_all = "snake_case")]
pub enum ExclusionReason {
    NoSeries,
    Missing(Vec<SeriesRole>),
    Ambiguous(Vec<SeriesRole>),
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |roles: &[SeriesRole]| {
            roles.iter().map(|r| r.label()).collect::<Vec<_>>().join(", ")
        };
        match self {
            ExclusionReason::NoSeries => f.write_str("no series"),
            ExclusionReason::Missing(r) => write!(f, "missing {}", join(r)),
            ExclusionReason::Ambiguous(r) => write!(f, "ambiguous {} (several candidates)", join(r)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub patient_id: String,
    pub reason: ExclusionReason,
}

/// File set of a complete patient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSources {
    pub patient_id: String,
    pub pre_contrast: PathBuf,
    pub first_post_contrast: PathBuf,
    pub region_mask: PathBuf,
    pub lesion_mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pairing {
    Complete(CaseSources),
    Excluded(ExclusionRecord),
}

/// Assigns one candidate to each required role, or explains why the
/// patient has to be excluded.
pub fn pair_contrast_series(patient_id: &str, candidates: &[SeriesCandidate]) -> Pairing {
    let exclude = |reason| {
        Pairing::Excluded(ExclusionRecord {
            patient_id: patient_id.to_string(),
            reason,
        })
    };
    if candidates.is_empty() {
        return exclude(ExclusionReason::NoSeries);
    }

    let mut slots: [Vec<&PathBuf>; 4] = Default::default();
    for c in candidates {
        if let Some(role) = classify_descriptor(&c.descriptor) {
            let idx = SeriesRole::REQUIRED.iter().position(|&r| r == role).unwrap();
            slots[idx].push(&c.path);
        }
    }
    let missing: Vec<SeriesRole> = SeriesRole::REQUIRED
        .iter()
        .zip(&slots)
        .filter(|(_, s)| s.is_empty())
        .map(|(&r, _)| r)
        .collect();
    if missing.len() == SeriesRole::REQUIRED.len() {
        return exclude(ExclusionReason::NoSeries);
    }
    if !missing.is_empty() {
        return exclude(ExclusionReason::Missing(missing));
    }
    let ambiguous: Vec<SeriesRole> = SeriesRole::REQUIRED
        .iter()
        .zip(&slots)
        .filter(|(_, s)| s.len() > 1)
        .map(|(&r, _)| r)
        .collect();
    if !ambiguous.is_empty() {
        return exclude(ExclusionReason::Ambiguous(ambiguous));
    }
    Pairing::Complete(CaseSources {
        patient_id: patient_id.to_string(),
        pre_contrast: slots[0][0].clone(),
        first_post_contrast: slots[1][0].clone(),
        region_mask: slots[2][0].clone(),
        lesion_mask: slots[3][0].clone(),
    })
}

fn nifti_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let lower = name.to_ascii_lowercase();
    for ext in [".nii.gz", ".nii"] {
        if lower.ends_with(ext) {
            return Some(name[..name.len() - ext.len()].to_string());
        }
    }
    None
}

/// Scans `root/<patient_id>/*.nii[.gz]`, using file stems as series
/// descriptors. Patients come back sorted by id.
pub fn scan_cohort_dir(root: &Path) -> Result<(Vec<CaseSources>, Vec<ExclusionRecord>)> {
    let read = |p: &Path| std::fs::read_dir(p).map_err(|e| Error::io(p, e));
    let mut patient_dirs: Vec<PathBuf> = read(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    patient_dirs.sort();

    let mut complete = Vec::new();
    let mut excluded = Vec::new();
    for dir in patient_dirs {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let mut candidates: Vec<SeriesCandidate> = read(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| nifti_stem(&p).map(|descriptor| SeriesCandidate { descriptor, path: p }))
            .collect();
        candidates.sort_by(|a, b| a.path.cmp(&b.path));
        match pair_contrast_series(&id, &candidates) {
            Pairing::Complete(c) => complete.push(c),
            Pairing::Excluded(x) => excluded.push(x),
        }
    }
    Ok((complete, excluded))
}
