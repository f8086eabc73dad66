//! Synthetic DCE-MRI-like cohorts with exact breast-region and lesion
//! ground truth.
//!
//! Each breast is a half-ellipsoid sitting on a flat chest row, so every
//! column of breast tissue ends exactly at that row. Rows are in image
//! order: anterior tissue toward `y = 0`, chest wall and heart at larger
//! `y`. Intensities are arbitrary units.

use std::path::Path;

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort_prep::PatientCase;
use crate::error::{Error, Result};
use crate::seed;
use crate::volume_io::{save_mask, save_volume, Approach, CohortManifest, MaskGrid, PatientEntry, VolumeGrid};

const BREAST: f32 = 100.0;
const CHEST_WALL: f32 = 60.0;
const HEART: f32 = 220.0;
const HEART_ENHANCEMENT: f32 = 80.0;
const ANTERIOR_NOISE: f32 = 15.0;
const MAX_PLACEMENT_TRIES: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreastGeometry {
    /// Chest row as a fraction of `H`.
    pub chest_row_frac: f64,
    pub chest_jitter_px: usize,
    /// Semi-axes as fractions of `W`, `H` and the patient's depth.
    pub semi_x_frac: f64,
    pub semi_y_frac: f64,
    pub semi_z_frac: f64,
    /// Relative per-patient jitter on each semi-axis.
    pub size_jitter: f64,
}

impl Default for BreastGeometry {
    fn default() -> Self {
        BreastGeometry {
            chest_row_frac: 0.72,
            chest_jitter_px: 2,
            semi_x_frac: 0.18,
            semi_y_frac: 0.3,
            semi_z_frac: 0.4,
            size_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionSpec {
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min_mm: f64,
    pub radius_max_mm: f64,
    /// Additive enhancement of lesion voxels in the first post-contrast.
    pub contrast: f32,
    /// Probability that a lesion lands in the left (low-`x`) breast.
    pub left_bias: f64,
}

impl Default for LesionSpec {
    fn default() -> Self {
        LesionSpec {
            count_min: 1,
            count_max: 3,
            radius_min_mm: 2.0,
            radius_max_mm: 4.0,
            contrast: 80.0,
            left_bias: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub cohort_id: String,
    pub patients: usize,
    /// `[W, H, D]`; `D` is the maximum depth.
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    /// Patient depths are drawn from `D - depth_jitter ..= D`.
    pub depth_jitter: usize,
    pub breast: BreastGeometry,
    pub lesions: LesionSpec,
    pub heart: bool,
    pub anterior_noise: bool,
    /// Amplitude of the uniform noise added to tissue.
    pub noise: f32,
    /// Fractional intensity gain of all tissue after contrast.
    pub global_enhancement: f32,
    pub compress: bool,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            cohort_id: "phantom".into(),
            patients: 8,
            shape: [64, 64, 20],
            spacing: [1.0, 1.0, 2.0],
            depth_jitter: 4,
            breast: BreastGeometry::default(),
            lesions: LesionSpec::default(),
            heart: true,
            anterior_noise: true,
            noise: 5.0,
            global_enhancement: 0.05,
            compress: false,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn patient_id(&self, index: usize) -> String {
        format!("P{index:03}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Phantom(m));
        let [w, h, d] = self.shape;
        if self.patients == 0 {
            return bad("patient count must be at least 1".into());
        }
        if w < 8 || h < 8 || d < 8 || d - self.depth_jitter.min(d) < 8 {
            return bad(format!(
                "every dimension must be at least 8 (shape {w}x{h}x{d}, depth jitter {})",
                self.depth_jitter
            ));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        let g = &self.breast;
        for (name, v) in [
            ("chest_row_frac", g.chest_row_frac),
            ("semi_x_frac", g.semi_x_frac),
            ("semi_y_frac", g.semi_y_frac),
            ("semi_z_frac", g.semi_z_frac),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(0.0..0.5).contains(&g.size_jitter) {
            return bad(format!("size_jitter must lie in [0, 0.5), got {}", g.size_jitter));
        }
        let chest_lo = (g.chest_row_frac * h as f64).round() as isize - g.chest_jitter_px as isize;
        let chest_hi = (g.chest_row_frac * h as f64).round() as usize + g.chest_jitter_px;
        let semi_y_max = g.semi_y_frac * h as f64 * (1.0 + g.size_jitter);
        if (chest_lo as f64) < semi_y_max || chest_hi >= h {
            return bad(format!(
                "breasts do not fit between row 0 and the chest line (rows {chest_lo}..={chest_hi}, depth up to {semi_y_max:.1} px)"
            ));
        }
        // Each breast occupies one half of the x range.
        if g.semi_x_frac * (1.0 + g.size_jitter) > 0.22 {
            return bad(format!("semi_x_frac {} is too wide for two breasts", g.semi_x_frac));
        }
        let l = &self.lesions;
        if l.count_min > l.count_max {
            return bad(format!("lesion count range {}..{} is empty", l.count_min, l.count_max));
        }
        if !(l.radius_min_mm > 0.0) || l.radius_min_mm > l.radius_max_mm {
            return bad(format!(
                "lesion radius range {}..{} mm is invalid",
                l.radius_min_mm, l.radius_max_mm
            ));
        }
        if !(l.contrast >= 0.0) || !(0.0..=1.0).contains(&l.left_bias) || !(self.noise >= 0.0) {
            return bad("contrast and noise must be non-negative and left_bias in [0, 1]".into());
        }
        if l.count_max > 0 {
            // Smallest breast after jitter must hold the largest lesion.
            let shrink = 1.0 - g.size_jitter;
            let min_depth = (d - self.depth_jitter) as f64;
            let semis_mm = [
                g.semi_x_frac * w as f64 * shrink * self.spacing[0],
                g.semi_y_frac * h as f64 * shrink * self.spacing[1],
                g.semi_z_frac * min_depth * shrink * self.spacing[2],
            ];
            let smallest = semis_mm.iter().cloned().fold(f64::INFINITY, f64::min);
            if l.radius_max_mm * 2.0 > smallest {
                return bad(format!(
                    "lesion radius {} mm exceeds breast size (smallest semi-axis {smallest:.1} mm)",
                    l.radius_max_mm
                ));
            }
        }
        Ok(())
    }
}

struct Breast {
    center: [f64; 2],
    semi: [f64; 3],
}

impl Breast {
    /// Inside test for voxel `(x, y, z)`; `chest` is the flat base row.
    fn contains(&self, x: usize, y: usize, z: usize, chest: usize) -> bool {
        if y > chest {
            return false;
        }
        let dx = (x as f64 - self.center[0]) / self.semi[0];
        let dy = (chest - y) as f64 / self.semi[1];
        let dz = (z as f64 - self.center[1]) / self.semi[2];
        dx * dx + dy * dy + dz * dz <= 1.0
    }
}

/// Builds one patient in memory.
pub fn generate_case(spec: &PhantomSpec, index: usize) -> Result<PatientCase> {
    let id = spec.patient_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &id));
    let [w, h, dmax] = spec.shape;
    let g = &spec.breast;
    let d = dmax - rng.gen_range(0..=spec.depth_jitter.min(dmax - 8));
    let jitter = g.chest_jitter_px as isize;
    let chest = ((g.chest_row_frac * h as f64).round() as isize + rng.gen_range(-jitter..=jitter)) as usize;
    let mut scale = || 1.0 + rng.gen_range(-g.size_jitter..=g.size_jitter);
    let breasts: Vec<Breast> = [0.28, 0.72]
        .iter()
        .map(|&fx| Breast {
            center: [fx * w as f64, (d as f64 - 1.0) / 2.0],
            semi: [
                g.semi_x_frac * w as f64 * scale(),
                g.semi_y_frac * h as f64 * scale(),
                g.semi_z_frac * d as f64 * scale(),
            ],
        })
        .collect();

    let mut region = Array3::<u8>::zeros((w, h, d));
    let mut side = Array3::<u8>::zeros((w, h, d));
    for ((x, y, z), v) in region.indexed_iter_mut() {
        for (k, b) in breasts.iter().enumerate() {
            if b.contains(x, y, z, chest) {
                *v = 1;
                side[[x, y, z]] = k as u8 + 1;
            }
        }
    }

    let lesion = place_lesions(spec, &mut rng, &region, &side, &id)?;

    // Heart: ellipsoid centered in the space behind the chest line.
    let heart_rows = h - chest - 1;
    let heart = (spec.heart && heart_rows >= 4).then(|| {
        let cy = chest as f64 + 1.0 + heart_rows as f64 / 2.0;
        let ry = heart_rows as f64 / 2.0 - 0.5;
        let rx = (w as f64 / 8.0).max(2.0);
        let rz = (d as f64 / 3.0).max(1.5);
        move |x: usize, y: usize, z: usize| {
            let dx = (x as f64 - w as f64 / 2.0) / rx;
            let dy = (y as f64 - cy) / ry;
            let dz = (z as f64 - (d as f64 - 1.0) / 2.0) / rz;
            y > chest && dx * dx + dy * dy + dz * dz <= 1.0
        }
    });

    let mut pc = Array3::<f32>::zeros((w, h, d));
    let mut fpc = Array3::<f32>::zeros((w, h, d));
    let gain = 1.0 + spec.global_enhancement;
    for ((x, y, z), p) in pc.indexed_iter_mut() {
        let noise = if spec.noise > 0.0 { rng.gen_range(0.0..spec.noise) } else { 0.0 };
        let (base, extra) = if region[[x, y, z]] == 1 {
            let enh = if lesion[[x, y, z]] == 1 { spec.lesions.contrast } else { 0.0 };
            (BREAST + noise, enh)
        } else if y > chest {
            match &heart {
                Some(f) if f(x, y, z) => (HEART + noise, HEART_ENHANCEMENT),
                _ => (CHEST_WALL + noise, 0.0),
            }
        } else if spec.anterior_noise && rng.gen_bool(0.3) {
            (rng.gen_range(0.0..ANTERIOR_NOISE), 0.0)
        } else {
            (0.0, 0.0)
        };
        *p = base;
        fpc[[x, y, z]] = base * gain + extra;
    }

    PatientCase::new(
        id,
        VolumeGrid::new(pc, spec.spacing)?,
        VolumeGrid::new(fpc, spec.spacing)?,
        MaskGrid::new(region, spec.spacing)?,
        MaskGrid::new(lesion, spec.spacing)?,
    )
}

fn place_lesions(
    spec: &PhantomSpec,
    rng: &mut ChaCha8Rng,
    region: &Array3<u8>,
    side: &Array3<u8>,
    id: &str,
) -> Result<Array3<u8>> {
    let l = &spec.lesions;
    let (w, h, d) = region.dim();
    let mut lesion = Array3::<u8>::zeros((w, h, d));
    let count = rng.gen_range(l.count_min..=l.count_max);
    let by_side: [Vec<[usize; 3]>; 2] = [1u8, 2].map(|s| {
        side.indexed_iter()
            .filter(|(_, &v)| v == s)
            .map(|((x, y, z), _)| [x, y, z])
            .collect()
    });
    let sp = spec.spacing;
    for _ in 0..count {
        let k = if rng.gen_bool(l.left_bias) { 0 } else { 1 };
        let r = if l.radius_max_mm > l.radius_min_mm {
            rng.gen_range(l.radius_min_mm..=l.radius_max_mm)
        } else {
            l.radius_min_mm
        };
        let reach = [0, 1, 2].map(|a| (r / sp[a]).floor() as usize);
        let ball = |c: [usize; 3]| {
            let lo = [0, 1, 2].map(|a| c[a].saturating_sub(reach[a]));
            let hi = [0, 1, 2].map(|a| (c[a] + reach[a]).min(region.len_of(Axis(a)) - 1));
            let mut out = Vec::new();
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let q = [x, y, z];
                        let dist2: f64 = (0..3)
                            .map(|a| ((q[a] as f64 - c[a] as f64) * sp[a]).powi(2))
                            .sum();
                        if dist2 <= r * r {
                            out.push(q);
                        }
                    }
                }
            }
            out
        };
        let candidates = &by_side[k];
        let fits = |c: [usize; 3]| {
            // The ball must not be clipped by the volume border either.
            (0..3).all(|a| c[a] >= reach[a] && c[a] + reach[a] < region.len_of(Axis(a)))
                && ball(c).iter().all(|q| side[*q] as usize == k + 1)
        };
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            if candidates.is_empty() {
                break;
            }
            let c = candidates[rng.gen_range(0..candidates.len())];
            if fits(c) {
                for q in ball(c) {
                    lesion[q] = 1;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Phantom(format!(
                "patient {id}: could not fit a {r:.2} mm lesion inside the breast region"
            )));
        }
    }
    Ok(lesion)
}

/// Builds every patient in memory, in parallel.
pub fn generate_cases(spec: &PhantomSpec) -> Result<Vec<PatientCase>> {
    spec.validate()?;
    (0..spec.patients)
        .into_par_iter()
        .map(|i| generate_case(spec, i))
        .collect()
}

/// Writes `<out>/<id>/{pre_contrast,first_post_contrast,region_mask,lesion_mask}`
/// plus a `SOURCE` manifest at `<out>/manifest.json`.
pub fn generate_cohort(spec: &PhantomSpec, out_dir: &Path) -> Result<CohortManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ext = if spec.compress { "nii.gz" } else { "nii" };
    let entries: Vec<PatientEntry> = (0..spec.patients)
        .into_par_iter()
        .map(|i| {
            let case = generate_case(spec, i)?;
            let dir = out_dir.join(&case.patient_id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let rel = |name: &str| Path::new(&case.patient_id).join(format!("{name}.{ext}"));
            save_volume(&case.pre_contrast, out_dir.join(rel("pre_contrast")))?;
            save_volume(&case.first_post_contrast, out_dir.join(rel("first_post_contrast")))?;
            save_mask(&case.region_mask, out_dir.join(rel("region_mask")))?;
            save_mask(&case.lesion_mask, out_dir.join(rel("lesion_mask")))?;
            Ok(PatientEntry {
                patient_id: case.patient_id.clone(),
                pre_contrast: rel("pre_contrast"),
                first_post_contrast: rel("first_post_contrast"),
                subtraction: None,
                region_mask: rel("region_mask"),
                lesion_mask: rel("lesion_mask"),
                shape: case.shape(),
                spacing: spec.spacing,
                oversampling: None,
                selected_slices: None,
                crop_offset: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut manifest = CohortManifest::new(spec.cohort_id.clone(), Approach::Source, spec.seed);
    manifest.patients = entries;
    manifest.write(out_dir.join("manifest.json"))?;
    let spec_path = out_dir.join("phantom.json");
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    std::fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort_prep::{apply_region_mask, select_lesion_slices};
    use crate::volume_io::bit_identical;

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec { patients: 3, seed, ..PhantomSpec::default() }
    }

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
    }

    #[test]
    fn lesions_inside_region_and_enhanced() {
        for seed in 0..4 {
            for case in generate_cases(&small(seed)).unwrap() {
                assert!(case.lesions_inside_region());
                let n = case.lesion_mask.count();
                assert!(n > 0);
                for (i, &l) in case.lesion_mask.data.indexed_iter() {
                    if l == 1 {
                        let d = case.first_post_contrast.data[i] - case.pre_contrast.data[i];
                        assert!(d >= PhantomSpec::default().lesions.contrast);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_cases(&small(9)).unwrap();
        let b = generate_cases(&small(9)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(bit_identical(&x.pre_contrast, &y.pre_contrast));
            assert!(bit_identical(&x.first_post_contrast, &y.first_post_contrast));
            assert_eq!(x.lesion_mask.data, y.lesion_mask.data);
        }
        let c = generate_cases(&small(10)).unwrap();
        assert!(!bit_identical(&a[0].pre_contrast, &c[0].pre_contrast));
    }

    #[test]
    fn zero_lesions() {
        let mut spec = small(1);
        spec.lesions.count_min = 0;
        spec.lesions.count_max = 0;
        for case in generate_cases(&spec).unwrap() {
            assert_eq!(case.lesion_mask.count(), 0);
            assert!(select_lesion_slices(&case.lesion_mask).is_empty());
        }
    }

    #[test]
    fn heart_removed_by_region_mask() {
        let mut spec = small(2);
        spec.noise = 0.0;
        let case = &generate_cases(&spec).unwrap()[0];
        let hearts = case.pre_contrast.data.iter().filter(|&&v| v == HEART).count();
        assert!(hearts > 0);
        let masked = apply_region_mask(&case.pre_contrast, &case.region_mask).unwrap();
        assert_eq!(masked.data.iter().filter(|&&v| v == HEART).count(), 0);

        spec.heart = false;
        let case = &generate_cases(&spec).unwrap()[0];
        assert_eq!(case.pre_contrast.data.iter().filter(|&&v| v == HEART).count(), 0);
    }

    #[test]
    fn columns_end_at_chest_row() {
        let case = &generate_cases(&small(3)).unwrap()[0];
        let m = &case.region_mask.data;
        let (w, h, d) = m.dim();
        let chest = (0..h).rev().find(|&y| (0..w).any(|x| (0..d).any(|z| m[[x, y, z]] == 1))).unwrap();
        for x in 0..w {
            for z in 0..d {
                if let Some(last) = (0..h).rev().find(|&y| m[[x, y, z]] == 1) {
                    assert_eq!(last, chest);
                }
            }
        }
    }

    #[test]
    fn left_bias_shifts_lesions() {
        let mut spec = small(4);
        spec.patients = 6;
        spec.lesions.left_bias = 1.0;
        for case in generate_cases(&spec).unwrap() {
            let w = case.shape()[0];
            assert!(case.lesion_mask.data.indexed_iter().all(|((x, _, _), &v)| v == 0 || x < w / 2));
        }
    }

    #[test]
    fn infeasible_geometry() {
        let mut spec = small(0);
        spec.lesions.radius_max_mm = 30.0;
        assert!(matches!(spec.validate(), Err(Error::Phantom(_))));
        let mut spec = small(0);
        spec.shape = [64, 64, 6];
        assert!(spec.validate().is_err());
        let mut spec = small(0);
        spec.breast.semi_y_frac = 0.9;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cohort_on_disk_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small(5);
        let m = generate_cohort(&spec, dir.path()).unwrap();
        m.validate().unwrap();
        let (sources, excluded) = crate::cohort_prep::scan_cohort_dir(dir.path()).unwrap();
        assert!(excluded.is_empty());
        assert_eq!(sources.len(), 3);
        let loaded = PatientCase::load(&sources[0]).unwrap();
        let mem = generate_case(&spec, 0).unwrap();
        assert!(bit_identical(&loaded.pre_contrast, &mem.pre_contrast));
        assert_eq!(loaded.region_mask.data, mem.region_mask.data);
    }
}
