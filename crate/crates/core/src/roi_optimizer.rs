//! Optimal-volume crop: measure how far breast content reaches along the
//! anterior-posterior (y) axis, pick one cohort-wide window height that is
//! a multiple of the network stride, and cut every volume to it.
//!
//! Row indices are treated image-style: the chest wall sits at the
//! largest content row (the chest line) and the window extends from it
//! toward row 0.

use ndarray::{s, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{Affine, Grid, MaskGrid, VolumeGrid};

pub const DEFAULT_MULTIPLE: usize = 32;

/// First and last content row of one slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSpan {
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtentReport {
    pub patient_id: String,
    /// `[W, H, D]` of the scanned volume.
    pub shape: [usize; 3],
    pub y_spacing: f64,
    /// Per slice; `None` for slices without content.
    pub rows: Vec<Option<RowSpan>>,
    pub y_min: usize,
    pub y_max: usize,
    /// Posterior boundary of breast content.
    pub chest_line: usize,
    pub required_height: usize,
}

impl ExtentReport {
    pub fn image_height(&self) -> usize {
        self.shape[1]
    }
}

fn scan<T>(
    patient_id: &str,
    data: ArrayView3<'_, T>,
    y_spacing: f64,
    is_content: impl Fn(&T) -> bool,
) -> Result<ExtentReport> {
    let (w, h, d) = data.dim();
    let rows: Vec<Option<RowSpan>> = data
        .axis_iter(Axis(2))
        .map(|slice| {
            let mut span: Option<RowSpan> = None;
            for (y, row) in slice.axis_iter(Axis(1)).enumerate() {
                if row.iter().any(&is_content) {
                    span = Some(match span {
                        None => RowSpan { first: y, last: y },
                        Some(s) => RowSpan { first: s.first, last: y },
                    });
                }
            }
            span
        })
        .collect();
    let spans = || rows.iter().flatten();
    let (Some(y_min), Some(y_max)) = (spans().map(|s| s.first).min(), spans().map(|s| s.last).max())
    else {
        return Err(Error::NoContent(format!("patient {patient_id}: volume is all zero")));
    };
    Ok(ExtentReport {
        patient_id: patient_id.to_string(),
        shape: [w, h, d],
        y_spacing,
        rows,
        y_min,
        y_max,
        chest_line: y_max,
        required_height: y_max - y_min + 1,
    })
}

/// Row extents of the non-zero voxels of a region-masked volume.
pub fn scan_extent(patient_id: &str, masked_vol: &VolumeGrid) -> Result<ExtentReport> {
    scan(patient_id, masked_vol.data.view(), masked_vol.spacing[1], |&v| v != 0.0)
}

/// Row extents of a region mask; bounds the content of every image
/// masked with it.
pub fn scan_mask_extent(patient_id: &str, mask: &MaskGrid) -> Result<ExtentReport> {
    scan(patient_id, mask.data.view(), mask.spacing[1], |&v| v != 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    /// Window ends at each patient's chest line and extends toward row 0,
    /// shifted back inside the image if it would underflow.
    ChestLineAnterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropPlan {
    /// Largest per-patient required height.
    pub required_height: usize,
    pub crop_height: usize,
    pub multiple: usize,
    pub safe_distance_px: usize,
    pub safe_distance_mm: f64,
    pub y_spacing: f64,
    pub image_height: usize,
    pub anchor: AnchorRule,
    pub crop_width: usize,
    pub crop_depth: usize,
}

/// Smallest multiple of `multiple` that is `>= required`.
pub fn round_up_to_multiple(required: usize, multiple: usize) -> usize {
    required.div_ceil(multiple) * multiple
}

/// Reduces per-patient reports to the cohort crop plan.
pub fn plan_crop(reports: &[ExtentReport], multiple: usize) -> Result<CropPlan> {
    if multiple == 0 {
        return Err(Error::InvalidInput("crop multiple must be positive".into()));
    }
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidInput("no extent reports to plan from".into()))?;
    for r in reports {
        if r.shape[0] != first.shape[0] || r.shape[1] != first.shape[1] {
            return Err(Error::Geometry(format!(
                "patient {} has in-plane size {}x{}, expected {}x{}",
                r.patient_id, r.shape[0], r.shape[1], first.shape[0], first.shape[1]
            )));
        }
        if (r.y_spacing - first.y_spacing).abs() > crate::volume_io::SPACING_TOLERANCE {
            return Err(Error::Geometry(format!(
                "patient {} has y-spacing {} mm, expected {} mm",
                r.patient_id, r.y_spacing, first.y_spacing
            )));
        }
    }
    let required_height = reports.iter().map(|r| r.required_height).max().unwrap_or(0);
    let image_height = first.image_height();
    if required_height > image_height {
        return Err(Error::InvalidInput(format!(
            "required height {required_height} exceeds image height {image_height}"
        )));
    }
    let crop_height = round_up_to_multiple(required_height, multiple);
    let safe_distance_px = crop_height - required_height;
    Ok(CropPlan {
        required_height,
        crop_height,
        multiple,
        safe_distance_px,
        safe_distance_mm: safe_distance_px as f64 * first.y_spacing,
        y_spacing: first.y_spacing,
        image_height,
        anchor: AnchorRule::ChestLineAnterior,
        crop_width: first.shape[0],
        crop_depth: reports.iter().map(|r| r.shape[2]).max().unwrap_or(0),
    })
}

/// First row of the crop window for one patient.
pub fn crop_start(plan: &CropPlan, report: &ExtentReport) -> Result<usize> {
    let h = report.image_height();
    if plan.crop_height > h {
        return Err(Error::InvalidInput(format!(
            "crop height {} exceeds image height {h}",
            plan.crop_height
        )));
    }
    Ok((report.chest_line + 1).saturating_sub(plan.crop_height))
}

/// Rows `start..start + height` of `grid`; the affine origin follows the
/// window.
pub fn crop_rows<T: Clone>(grid: &Grid<T>, start: usize, height: usize) -> Result<Grid<T>> {
    let h = grid.shape()[1];
    if start + height > h || height == 0 {
        return Err(Error::InvalidInput(format!(
            "crop rows {start}..{} outside image height {h}",
            start + height
        )));
    }
    let data = grid.data.slice(s![.., start..start + height, ..]).to_owned();
    let affine = grid.affine.map(|a| {
        let col = a.column(1);
        let mut m = a.0;
        for i in 0..3 {
            m[i][3] += col[i] * start as f64;
        }
        Affine(m)
    });
    Ok(Grid {
        data,
        spacing: grid.spacing,
        affine,
    })
}

/// Cuts `vol` to the plan's height around the patient's chest line.
pub fn apply_crop(vol: &VolumeGrid, plan: &CropPlan, report: &ExtentReport) -> Result<VolumeGrid> {
    if vol.shape()[1] != report.image_height() {
        return Err(Error::Geometry(format!(
            "volume height {} does not match extent report height {}",
            vol.shape()[1],
            report.image_height()
        )));
    }
    let start = crop_start(plan, report)?;
    crop_rows(vol, start, plan.crop_height)
}
