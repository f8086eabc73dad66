use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort_prep::{ExclusionRecord, OversampleMap};
use crate::error::{Error, Result};
use crate::roi_optimizer::CropPlan;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Dataset variant a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    /// Ingested cohort before any assembly; shapes may differ per patient.
    #[serde(rename = "SOURCE")]
    Source,
    /// Whole volume, no region masking.
    #[serde(rename = "WV_RAW")]
    WvRaw,
    /// Whole volume, region-masked.
    #[serde(rename = "BRS_WV")]
    BrsWv,
    /// Region-masked, lesion-bearing slices only.
    #[serde(rename = "BRS_SLS")]
    BrsSls,
    /// Selected lesion slices cropped to the optimal height.
    #[serde(rename = "BRS_OV")]
    BrsOv,
}

impl Approach {
    /// The four assembled variants, in table order.
    pub const ASSEMBLED: [Approach; 4] = [
        Approach::WvRaw,
        Approach::BrsWv,
        Approach::BrsSls,
        Approach::BrsOv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Source => "SOURCE",
            Approach::WvRaw => "WV_RAW",
            Approach::BrsWv => "BRS_WV",
            Approach::BrsSls => "BRS_SLS",
            Approach::BrsOv => "BRS_OV",
        }
    }

    pub fn is_region_masked(self) -> bool {
        matches!(self, Approach::BrsWv | Approach::BrsSls | Approach::BrsOv)
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SOURCE" => Ok(Approach::Source),
            "WV_RAW" | "WV" => Ok(Approach::WvRaw),
            "BRS_WV" => Ok(Approach::BrsWv),
            "BRS_SLS" | "SLS" => Ok(Approach::BrsSls),
            "BRS_OV" | "OV" => Ok(Approach::BrsOv),
            _ => Err(Error::InvalidInput(format!(
                "unknown approach '{s}' (expected WV_RAW, BRS_WV, BRS_SLS or BRS_OV)"
            ))),
        }
    }
}

/// One patient's files and the transforms that produced them. Paths are
/// relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub pre_contrast: PathBuf,
    pub first_post_contrast: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtraction: Option<PathBuf>,
    pub region_mask: PathBuf,
    pub lesion_mask: PathBuf,
    /// `[W, H, D]`.
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversampling: Option<OversampleMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_slices: Option<Vec<usize>>,
    /// Offset `[x, y, z]` of the crop window in the uncropped volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_offset: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub cohort_id: String,
    pub approach: Approach,
    pub seed: u64,
    pub patients: Vec<PatientEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_plan: Option<CropPlan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<ExclusionRecord>,
    /// Directory relative paths resolve against; set on read/write.
    #[serde(skip)]
    pub root: PathBuf,
}

impl CohortManifest {
    pub fn new(cohort_id: impl Into<String>, approach: Approach, seed: u64) -> Self {
        CohortManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            cohort_id: cohort_id.into(),
            approach,
            seed,
            patients: Vec::new(),
            crop_plan: None,
            exclusions: Vec::new(),
            root: PathBuf::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Shared `[W, H, D]` of an assembled manifest.
    pub fn uniform_shape(&self) -> Option<[usize; 3]> {
        let first = self.patients.first()?.shape;
        self.patients.iter().all(|p| p.shape == first).then_some(first)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CohortManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "{}: unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                path.display(),
                manifest.schema_version
            )));
        }
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn write(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        self.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(())
    }

    /// Checks id uniqueness, file existence and (for assembled
    /// approaches) shape uniformity.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate patient id '{}'", p.patient_id)));
            }
            let files = [
                Some(&p.pre_contrast),
                Some(&p.first_post_contrast),
                p.subtraction.as_ref(),
                Some(&p.region_mask),
                Some(&p.lesion_mask),
            ];
            for f in files.into_iter().flatten() {
                let full = self.resolve(f);
                if !full.is_file() {
                    return Err(Error::NotFound(full));
                }
            }
        }
        if self.approach != Approach::Source
            && !self.patients.is_empty()
            && self.uniform_shape().is_none()
        {
            return Err(Error::Manifest(format!(
                "{} manifest has non-uniform patient shapes",
                self.approach
            )));
        }
        if self.approach == Approach::BrsOv && self.crop_plan.is_none() {
            return Err(Error::Manifest("BRS_OV manifest lacks a crop plan".into()));
        }
        Ok(())
    }
}
