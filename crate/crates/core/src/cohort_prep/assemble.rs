use std::borrow::Cow;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_region_mask, minmax_normalize, select_lesion_slices, subtract, take_slices};
use super::{OversampleMap, PatientCase};
use crate::error::{Error, Result};
use crate::roi_optimizer::{crop_rows, crop_start, scan_mask_extent, CropPlan, ExtentReport};
use crate::seed;
use crate::volume_io::{
    save_mask, save_volume, spacing_matches, Approach, CohortManifest, MaskGrid, PatientEntry,
    VolumeGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleParams {
    pub cohort_id: String,
    /// Required for `BRS_OV`.
    pub crop_plan: Option<CropPlan>,
    pub include_subtraction: bool,
    /// Per-volume min-max rescaling of the intensity images.
    pub normalize: bool,
    /// Write `.nii.gz` instead of `.nii`.
    pub compress: bool,
}

impl Default for AssembleParams {
    fn default() -> Self {
        AssembleParams {
            cohort_id: "cohort".into(),
            crop_plan: None,
            include_subtraction: true,
            normalize: false,
            compress: false,
        }
    }
}

/// A patient after the approach recipe has been applied.
#[derive(Debug, Clone)]
pub struct AssembledCase {
    pub patient_id: String,
    pub pre_contrast: VolumeGrid,
    pub first_post_contrast: VolumeGrid,
    pub subtraction: Option<VolumeGrid>,
    pub region_mask: MaskGrid,
    pub lesion_mask: MaskGrid,
    pub oversampling: OversampleMap,
    pub selected_slices: Option<Vec<usize>>,
    pub crop_offset: Option<[usize; 3]>,
}

impl AssembledCase {
    pub fn shape(&self) -> [usize; 3] {
        self.pre_contrast.shape()
    }

    fn write(&self, out_dir: &Path, compress: bool) -> Result<PatientEntry> {
        let ext = if compress { "nii.gz" } else { "nii" };
        let rel_dir = PathBuf::from(&self.patient_id);
        let dir = out_dir.join(&rel_dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rel = |name: &str| rel_dir.join(format!("{name}.{ext}"));

        save_volume(&self.pre_contrast, out_dir.join(rel("pre_contrast")))?;
        save_volume(&self.first_post_contrast, out_dir.join(rel("first_post_contrast")))?;
        let subtraction = match &self.subtraction {
            Some(sub) => {
                save_volume(sub, out_dir.join(rel("subtraction")))?;
                Some(rel("subtraction"))
            }
            None => None,
        };
        save_mask(&self.region_mask, out_dir.join(rel("region_mask")))?;
        save_mask(&self.lesion_mask, out_dir.join(rel("lesion_mask")))?;

        Ok(PatientEntry {
            patient_id: self.patient_id.clone(),
            pre_contrast: rel("pre_contrast"),
            first_post_contrast: rel("first_post_contrast"),
            subtraction,
            region_mask: rel("region_mask"),
            lesion_mask: rel("lesion_mask"),
            shape: self.shape(),
            spacing: self.pre_contrast.spacing,
            oversampling: Some(self.oversampling.clone()),
            selected_slices: self.selected_slices.clone(),
            crop_offset: self.crop_offset,
        })
    }
}

fn canonical(case: &PatientCase) -> Result<Cow<'_, PatientCase>> {
    let all_ras = [
        case.pre_contrast.orientation()?,
        case.first_post_contrast.orientation()?,
        case.region_mask.orientation()?,
        case.lesion_mask.orientation()?,
    ]
    .iter()
    .all(|o| o.is_ras());
    if all_ras {
        return Ok(Cow::Borrowed(case));
    }
    let c = case.clone();
    let mut out = PatientCase::new(
        c.patient_id,
        c.pre_contrast.canonicalize_ras()?,
        c.first_post_contrast.canonicalize_ras()?,
        c.region_mask.canonicalize_ras()?,
        c.lesion_mask.canonicalize_ras()?,
    )?;
    out.subtraction = c.subtraction.map(|s| s.canonicalize_ras()).transpose()?;
    Ok(Cow::Owned(out))
}

fn check_cohort(cases: &[PatientCase]) -> Result<()> {
    let first = cases
        .first()
        .ok_or_else(|| Error::InvalidInput("cohort has no patients".into()))?;
    for c in cases {
        if !spacing_matches(c.pre_contrast.spacing, first.pre_contrast.spacing) {
            return Err(Error::Geometry(format!(
                "inconsistent spacing across patients: {} has {:?}, {} has {:?}",
                c.patient_id, c.pre_contrast.spacing, first.patient_id, first.pre_contrast.spacing
            )));
        }
        let (a, b) = (c.shape(), first.shape());
        if a[0] != b[0] || a[1] != b[1] {
            return Err(Error::Geometry(format!(
                "inconsistent in-plane size across patients: {} is {}x{}, {} is {}x{}",
                c.patient_id, a[0], a[1], first.patient_id, b[0], b[1]
            )));
        }
    }
    Ok(())
}

fn lesion_slices_nonempty(case: &PatientCase) -> Result<Vec<usize>> {
    let slices = select_lesion_slices(&case.lesion_mask);
    if slices.is_empty() {
        return Err(Error::InvalidInput(format!(
            "patient {} has no lesion slices",
            case.patient_id
        )));
    }
    Ok(slices)
}

/// Uniform depth of an approach: the cohort's largest depth for whole
/// volumes, its largest lesion-slice count otherwise.
pub fn target_depth(cases: &[PatientCase], approach: Approach) -> Result<usize> {
    match approach {
        Approach::Source => Err(Error::InvalidInput("SOURCE is not an assembled approach".into())),
        Approach::WvRaw | Approach::BrsWv => Ok(cases.iter().map(|c| c.shape()[2]).max().unwrap_or(0)),
        Approach::BrsSls | Approach::BrsOv => cases
            .iter()
            .map(|c| lesion_slices_nonempty(c).map(|s| s.len()))
            .try_fold(0, |acc, n| n.map(|n| acc.max(n))),
    }
}

/// Extents of each patient's region mask restricted to its lesion slices,
/// the input to crop planning for the optimized volume.
pub fn sls_extent_reports(cases: &[PatientCase]) -> Result<Vec<ExtentReport>> {
    cases
        .par_iter()
        .map(|case| {
            let case = canonical(case)?;
            let slices = lesion_slices_nonempty(&case)?;
            let region = MaskGrid::from_grid(take_slices(&case.region_mask, &slices)?)?;
            scan_mask_extent(&case.patient_id, &region)
        })
        .collect()
}

/// Applies the approach recipe to one patient.
pub fn build_case(
    case: &PatientCase,
    approach: Approach,
    depth: usize,
    params: &AssembleParams,
    seed: u64,
) -> Result<AssembledCase> {
    let case = canonical(case)?;
    let id = case.patient_id.clone();

    let (mut pre, mut fpc) = if approach.is_region_masked() {
        (
            apply_region_mask(&case.pre_contrast, &case.region_mask)?,
            apply_region_mask(&case.first_post_contrast, &case.region_mask)?,
        )
    } else if approach == Approach::WvRaw {
        (case.pre_contrast.clone(), case.first_post_contrast.clone())
    } else {
        return Err(Error::InvalidInput(format!("cannot assemble approach {approach}")));
    };
    let mut region = case.region_mask.clone();
    let mut lesion = case.lesion_mask.clone();

    let mut selected_slices = None;
    let mut crop_offset = None;
    if matches!(approach, Approach::BrsSls | Approach::BrsOv) {
        let slices = lesion_slices_nonempty(&case)?;
        pre = take_slices(&pre, &slices)?;
        fpc = take_slices(&fpc, &slices)?;
        region = MaskGrid::from_grid(take_slices(&region, &slices)?)?;
        lesion = MaskGrid::from_grid(take_slices(&lesion, &slices)?)?;
        selected_slices = Some(slices);
    }
    if approach == Approach::BrsOv {
        let plan = params
            .crop_plan
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("BRS_OV requires a crop plan".into()))?;
        if plan.image_height != pre.shape()[1] || plan.crop_width != pre.shape()[0] {
            return Err(Error::Geometry(format!(
                "crop plan was made for {}x{} images, patient {id} is {}x{}",
                plan.crop_width,
                plan.image_height,
                pre.shape()[0],
                pre.shape()[1]
            )));
        }
        let report = scan_mask_extent(&id, &region)?;
        let start = crop_start(plan, &report)?;
        let h = plan.crop_height;
        pre = crop_rows(&pre, start, h)?;
        fpc = crop_rows(&fpc, start, h)?;
        region = MaskGrid::from_grid(crop_rows(&region, start, h)?)?;
        lesion = MaskGrid::from_grid(crop_rows(&lesion, start, h)?)?;
        crop_offset = Some([0, start, 0]);
    }

    let map = OversampleMap::random(pre.shape()[2], depth, seed::derive(seed, &id))?;
    let pre = map.apply(&pre)?;
    let fpc = map.apply(&fpc)?;
    let region = map.apply_mask(&region)?;
    let lesion = map.apply_mask(&lesion)?;

    let subtraction = if params.include_subtraction {
        Some(subtract(&fpc, &pre)?)
    } else {
        None
    };
    let norm = |v: VolumeGrid| if params.normalize { minmax_normalize(&v) } else { v };

    Ok(AssembledCase {
        patient_id: id,
        pre_contrast: norm(pre),
        first_post_contrast: norm(fpc),
        subtraction: subtraction.map(norm),
        region_mask: region,
        lesion_mask: lesion,
        oversampling: map,
        selected_slices,
        crop_offset,
    })
}

/// Builds every patient of an approach without touching the disk.
pub fn assemble_in_memory(
    cases: &[PatientCase],
    approach: Approach,
    params: &AssembleParams,
    seed: u64,
) -> Result<Vec<AssembledCase>> {
    check_cohort(cases)?;
    let depth = target_depth(cases, approach)?;
    cases
        .par_iter()
        .map(|c| build_case(c, approach, depth, params, seed))
        .collect()
}

/// Builds an approach dataset under `out_dir` and writes its manifest to
/// `out_dir/manifest.json`. Patients are processed one at a time per
/// worker and released once written.
pub fn assemble_approach(
    cases: &[PatientCase],
    approach: Approach,
    params: &AssembleParams,
    seed: u64,
    out_dir: &Path,
) -> Result<CohortManifest> {
    check_cohort(cases)?;
    if approach == Approach::BrsOv && params.crop_plan.is_none() {
        return Err(Error::InvalidInput("BRS_OV requires a crop plan".into()));
    }
    let depth = target_depth(cases, approach)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let patients = cases
        .par_iter()
        .map(|c| build_case(c, approach, depth, params, seed)?.write(out_dir, params.compress))
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = CohortManifest::new(params.cohort_id.clone(), approach, seed);
    manifest.patients = patients;
    if approach == Approach::BrsOv {
        manifest.crop_plan = params.crop_plan.clone();
    }
    manifest.write(out_dir.join("manifest.json"))?;
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi_optimizer::plan_crop;
    use crate::volume_io::Affine;
    use ndarray::{s, Array3};

    /// Box-shaped breast at rows `rows` on every slice, lesions on `lesion_z`.
    fn case(id: &str, shape: [usize; 3], rows: (usize, usize), lesion_z: &[usize]) -> PatientCase {
        let [w, h, d] = shape;
        let region = Array3::from_shape_fn((w, h, d), |(_, y, _)| u8::from(y >= rows.0 && y <= rows.1));
        let mut lesion = Array3::<u8>::zeros((w, h, d));
        for &z in lesion_z {
            lesion[[w / 2, (rows.0 + rows.1) / 2, z]] = 1;
        }
        let pre = Array3::from_shape_fn((w, h, d), |(x, y, z)| (1 + x + y + z) as f32);
        let fpc = pre.mapv(|v| v + 10.0);
        PatientCase::new(
            id,
            VolumeGrid::new(pre, [1.0; 3]).unwrap(),
            VolumeGrid::new(fpc, [1.0; 3]).unwrap(),
            MaskGrid::new(region, [1.0; 3]).unwrap(),
            MaskGrid::new(lesion, [1.0; 3]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn phantom_scale_shapes_follow_recipe() {
        let cases = vec![
            case("A", [64, 64, 20], (20, 49), &[3, 4, 5, 6, 7, 8]),
            case("B", [64, 64, 16], (30, 45), &[2, 9]),
        ];
        let reports = sls_extent_reports(&cases).unwrap();
        let plan = plan_crop(&reports, 32).unwrap();
        assert_eq!(plan.required_height, 30);
        assert_eq!(plan.crop_height, 32);
        let params = AssembleParams {
            crop_plan: Some(plan),
            ..AssembleParams::default()
        };
        let shape = |a| {
            let built = assemble_in_memory(&cases, a, &params, 3).unwrap();
            let shapes: Vec<_> = built.iter().map(|c| c.shape()).collect();
            assert!(shapes.windows(2).all(|w| w[0] == w[1]));
            shapes[0]
        };
        assert_eq!(shape(Approach::WvRaw), [64, 64, 20]);
        assert_eq!(shape(Approach::BrsWv), [64, 64, 20]);
        assert_eq!(shape(Approach::BrsSls), [64, 64, 6]);
        assert_eq!(shape(Approach::BrsOv), [64, 32, 6]);
    }

    #[test]
    fn lesions_on_every_slice_keep_full_depth() {
        let all: Vec<usize> = (0..12).collect();
        let cases = vec![case("A", [16, 16, 12], (2, 9), &all)];
        let wv = assemble_in_memory(&cases, Approach::BrsWv, &AssembleParams::default(), 1).unwrap();
        let sls = assemble_in_memory(&cases, Approach::BrsSls, &AssembleParams::default(), 1).unwrap();
        assert_eq!(wv[0].shape()[2], sls[0].shape()[2]);
    }

    #[test]
    fn masked_approaches_zero_outside_region() {
        let cases = vec![case("A", [16, 32, 6], (5, 20), &[1, 2])];
        let raw = assemble_in_memory(&cases, Approach::WvRaw, &AssembleParams::default(), 1).unwrap();
        let wv = assemble_in_memory(&cases, Approach::BrsWv, &AssembleParams::default(), 1).unwrap();
        assert!(raw[0].pre_contrast.data.slice(s![.., 25.., ..]).iter().all(|&v| v > 0.0));
        assert!(wv[0].pre_contrast.data.slice(s![.., 25.., ..]).iter().all(|&v| v == 0.0));
        assert!(wv[0].subtraction.as_ref().unwrap().data.slice(s![.., 25.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ov_without_plan_fails() {
        let cases = vec![case("A", [16, 32, 6], (5, 20), &[1])];
        let dir = tempfile::tempdir().unwrap();
        let err = assemble_approach(&cases, Approach::BrsOv, &AssembleParams::default(), 1, dir.path());
        assert!(err.unwrap_err().to_string().contains("crop plan"));
    }

    #[test]
    fn spacing_mismatch_fails() {
        let a = case("A", [16, 32, 6], (5, 20), &[1]);
        let mut b = case("B", [16, 32, 6], (5, 20), &[1]);
        b.pre_contrast.spacing = [1.0, 1.0, 3.0];
        b.first_post_contrast.spacing = [1.0, 1.0, 3.0];
        let err = assemble_in_memory(&[a, b], Approach::BrsWv, &AssembleParams::default(), 1).unwrap_err();
        assert!(err.to_string().contains("inconsistent spacing"));
    }

    #[test]
    fn sls_needs_lesions() {
        let cases = vec![case("A", [16, 32, 6], (5, 20), &[])];
        assert!(assemble_in_memory(&cases, Approach::BrsSls, &AssembleParams::default(), 1).is_err());
    }

    #[test]
    fn non_ras_case_is_canonicalized() {
        let mut c = case("A", [8, 10, 4], (2, 6), &[1]);
        let lps = Affine([[-1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        c.pre_contrast = c.pre_contrast.with_affine(Some(lps));
        c.first_post_contrast = c.first_post_contrast.with_affine(Some(lps));
        c.region_mask = c.region_mask.with_affine(Some(lps));
        c.lesion_mask = c.lesion_mask.with_affine(Some(lps));
        let out = assemble_in_memory(&[c.clone()], Approach::WvRaw, &AssembleParams::default(), 1).unwrap();
        assert!(out[0].pre_contrast.orientation().unwrap().is_ras());
        assert_eq!(out[0].pre_contrast.data[[0, 0, 0]], c.pre_contrast.data[[7, 9, 0]]);
    }

    #[test]
    fn written_manifest_round_trips() {
        let cases = vec![
            case("A", [16, 32, 6], (5, 20), &[1, 2]),
            case("B", [16, 32, 5], (8, 12), &[3]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let m = assemble_approach(&cases, Approach::BrsSls, &AssembleParams::default(), 4, dir.path()).unwrap();
        assert_eq!(m.uniform_shape(), Some([16, 32, 2]));
        let back = CohortManifest::read(dir.path().join("manifest.json")).unwrap();
        back.validate().unwrap();
        assert_eq!(back.patients, m.patients);
        assert_eq!(back.patients[1].selected_slices, Some(vec![3]));
        let reloaded = PatientCase::load_entry(&back, &back.patients[1]).unwrap();
        assert_eq!(reloaded.lesion_mask.count(), 2);
    }
}
