//! Per-patient preparation and assembly of the four dataset variants.

mod assemble;
mod oversample;
mod pairing;

use ndarray::{Axis, Zip};

pub use assemble::{
    assemble_approach, assemble_in_memory, build_case, sls_extent_reports, target_depth,
    AssembleParams, AssembledCase,
};
pub use oversample::{oversample_depth, OversampleMap};
pub use pairing::{
    classify_descriptor, pair_contrast_series, scan_cohort_dir, CaseSources, ExclusionReason,
    ExclusionRecord, Pairing, SeriesCandidate, SeriesRole,
};

use crate::error::{Error, Result};
use crate::volume_io::{
    check_same_geometry, load_mask, load_volume, CohortManifest, Grid, MaskGrid, PatientEntry,
    VolumeGrid,
};

/// One patient's paired acquisitions and masks, all on one grid.
#[derive(Debug, Clone)]
pub struct PatientCase {
    pub patient_id: String,
    pub pre_contrast: VolumeGrid,
    pub first_post_contrast: VolumeGrid,
    pub subtraction: Option<VolumeGrid>,
    /// Breast-region (BRS) mask.
    pub region_mask: MaskGrid,
    /// Lesion ground truth.
    pub lesion_mask: MaskGrid,
}

impl PatientCase {
    pub fn new(
        patient_id: impl Into<String>,
        pre_contrast: VolumeGrid,
        first_post_contrast: VolumeGrid,
        region_mask: MaskGrid,
        lesion_mask: MaskGrid,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        let ctx = |what: &str| format!("patient {patient_id}: {what}");
        check_same_geometry(&pre_contrast, &first_post_contrast, &ctx("pre vs first post-contrast"))?;
        check_same_geometry(&pre_contrast, &region_mask, &ctx("pre-contrast vs region mask"))?;
        check_same_geometry(&pre_contrast, &lesion_mask, &ctx("pre-contrast vs lesion mask"))?;
        Ok(PatientCase {
            patient_id,
            pre_contrast,
            first_post_contrast,
            subtraction: None,
            region_mask,
            lesion_mask,
        })
    }

    /// Loads every file and canonicalizes it to RAS.
    pub fn load(sources: &CaseSources) -> Result<Self> {
        let vol = |p| load_volume(p).and_then(|v| v.canonicalize_ras());
        let mask = |p| load_mask(p).and_then(|m| m.canonicalize_ras());
        PatientCase::new(
            sources.patient_id.clone(),
            vol(&sources.pre_contrast)?,
            vol(&sources.first_post_contrast)?,
            mask(&sources.region_mask)?,
            mask(&sources.lesion_mask)?,
        )
    }

    pub fn load_entry(manifest: &CohortManifest, entry: &PatientEntry) -> Result<Self> {
        PatientCase::load(&CaseSources {
            patient_id: entry.patient_id.clone(),
            pre_contrast: manifest.resolve(&entry.pre_contrast),
            first_post_contrast: manifest.resolve(&entry.first_post_contrast),
            region_mask: manifest.resolve(&entry.region_mask),
            lesion_mask: manifest.resolve(&entry.lesion_mask),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.pre_contrast.shape()
    }

    pub fn with_subtraction(mut self) -> Result<Self> {
        self.subtraction = Some(subtract(&self.first_post_contrast, &self.pre_contrast)?);
        Ok(self)
    }

    /// Every lesion voxel lies inside the region mask.
    pub fn lesions_inside_region(&self) -> bool {
        Zip::from(&self.lesion_mask.data)
            .and(&self.region_mask.data)
            .all(|&l, &r| l == 0 || r == 1)
    }
}

/// Enhancement image `max(fpc - pc, 0)`.
pub fn subtract(fpc: &VolumeGrid, pc: &VolumeGrid) -> Result<VolumeGrid> {
    check_same_geometry(fpc, pc, "subtraction")?;
    let data = Zip::from(&fpc.data)
        .and(&pc.data)
        .map_collect(|&f, &p| (f - p).max(0.0));
    Ok(fpc.with_data(data))
}

/// Zeroes every voxel outside the mask.
pub fn apply_region_mask(vol: &VolumeGrid, mask: &MaskGrid) -> Result<VolumeGrid> {
    check_same_geometry(vol, mask, "region masking")?;
    let data = Zip::from(&vol.data)
        .and(&mask.data)
        .map_collect(|&v, &m| if m == 1 { v } else { 0.0 });
    Ok(vol.with_data(data))
}

/// Ascending z indices holding at least one lesion voxel.
pub fn select_lesion_slices(lesion_mask: &MaskGrid) -> Vec<usize> {
    lesion_mask
        .data
        .axis_iter(Axis(2))
        .enumerate()
        .filter(|(_, slice)| slice.iter().any(|&v| v != 0))
        .map(|(z, _)| z)
        .collect()
}

/// Keeps only the listed z slices, in the given order.
pub fn take_slices<T: Clone>(grid: &Grid<T>, slices: &[usize]) -> Result<Grid<T>> {
    let depth = grid.shape()[2];
    if let Some(&bad) = slices.iter().find(|&&z| z >= depth) {
        return Err(Error::InvalidInput(format!(
            "slice {bad} out of range for depth {depth}"
        )));
    }
    Ok(grid.with_data(grid.data.select(Axis(2), slices)))
}

/// Min-max rescaling to `[0, 1]`; constant volumes map to zero.
pub fn minmax_normalize(vol: &VolumeGrid) -> VolumeGrid {
    let (lo, hi) = vol
        .data
        .iter()
        .filter(|v| v.is_finite())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vol.with_data(vol.data.mapv(|_| 0.0));
    }
    vol.with_data(vol.data.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0)))
}
