//! Cohort-level summaries of where breast tissue and lesions sit in-plane.
//!
//! Every map here is indexed `(x, y)` like the volumes, with `y` rows in
//! image order: the chest line is at high `y`, anterior tissue toward 0.

use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{load_mask, check_same_geometry, Approach, CohortManifest, MaskGrid};

/// Per-cell count of (patient, slice) pairs with a non-zero mask voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayMap {
    pub region: Array2<u32>,
    pub lesion: Array2<u32>,
    pub patients: usize,
    pub slices: usize,
}

impl OverlayMap {
    pub fn new(width: usize, height: usize) -> Self {
        OverlayMap {
            region: Array2::zeros((width, height)),
            lesion: Array2::zeros((width, height)),
            patients: 0,
            slices: 0,
        }
    }

    pub fn dims(&self) -> [usize; 2] {
        let (w, h) = self.region.dim();
        [w, h]
    }

    pub fn accumulate(&mut self, region: &MaskGrid, lesion: &MaskGrid) -> Result<()> {
        check_same_geometry(region, lesion, "region vs lesion mask")?;
        let [w, h, d] = region.shape();
        if [w, h] != self.dims() {
            return Err(Error::Geometry(format!(
                "in-plane size {w}x{h} differs from map size {}x{}",
                self.dims()[0],
                self.dims()[1]
            )));
        }
        add_projection(&mut self.region, region);
        add_projection(&mut self.lesion, lesion);
        self.patients += 1;
        self.slices += d;
        Ok(())
    }

    pub fn merge(mut self, other: OverlayMap) -> Result<OverlayMap> {
        if self.dims() != other.dims() {
            return Err(Error::Geometry(format!(
                "cannot merge maps of size {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        self.region += &other.region;
        self.lesion += &other.lesion;
        self.patients += other.patients;
        self.slices += other.slices;
        Ok(self)
    }

    pub fn region_total(&self) -> u64 {
        self.region.iter().map(|&v| v as u64).sum()
    }

    pub fn lesion_total(&self) -> u64 {
        self.lesion.iter().map(|&v| v as u64).sum()
    }
}

fn add_projection(acc: &mut Array2<u32>, mask: &MaskGrid) {
    for slice in mask.data.axis_iter(Axis(2)) {
        Zip::from(&mut *acc).and(&slice).for_each(|a, &m| *a += m as u32);
    }
}

/// Accumulates `(region, lesion)` mask pairs, in parallel per patient.
pub fn overlay_map(pairs: &[(MaskGrid, MaskGrid)]) -> Result<OverlayMap> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::InvalidInput("no masks to overlay".into()));
    };
    let [w, h, _] = first.shape();
    pairs
        .par_iter()
        .try_fold(
            || OverlayMap::new(w, h),
            |mut acc, (r, l)| {
                acc.accumulate(r, l)?;
                Ok(acc)
            },
        )
        .try_reduce(|| OverlayMap::new(w, h), OverlayMap::merge)
}

/// Streams each patient's masks from disk so only a few are held at once.
pub fn overlay_from_manifest(manifest: &CohortManifest) -> Result<OverlayMap> {
    let Some(first) = manifest.patients.first() else {
        return Err(Error::Manifest(format!("cohort '{}' has no patients", manifest.cohort_id)));
    };
    let [w, h, _] = first.shape;
    manifest
        .patients
        .par_iter()
        .try_fold(
            || OverlayMap::new(w, h),
            |mut acc, p| {
                let load = |f: &Path| load_mask(manifest.resolve(f)).and_then(|m| m.canonicalize_ras());
                acc.accumulate(&load(&p.region_mask)?, &load(&p.lesion_mask)?)?;
                Ok(acc)
            },
        )
        .try_reduce(|| OverlayMap::new(w, h), OverlayMap::merge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramAxis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisHistogram {
    pub axis: HistogramAxis,
    pub values: Vec<u64>,
}

impl AxisHistogram {
    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }
}

/// Lesion-map sums along each in-plane axis: `x[i] = Σ_y`, `y[j] = Σ_x`.
pub fn axis_histograms(map: &OverlayMap) -> (AxisHistogram, AxisHistogram) {
    let sum = |axis: usize| {
        map.lesion
            .axis_iter(Axis(axis))
            .map(|lane| lane.iter().map(|&v| v as u64).sum())
            .collect()
    };
    (
        AxisHistogram { axis: HistogramAxis::X, values: sum(0) },
        AxisHistogram { axis: HistogramAxis::Y, values: sum(1) },
    )
}

/// Per-column vertical extent of the region map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidlineProfile {
    /// `E(x) = last - first + 1` over rows with non-zero region count; 0 for
    /// empty columns.
    pub extent: Vec<usize>,
    pub h_max_mid: usize,
    /// Smallest column reaching `h_max_mid`; `None` for an empty map.
    pub argmax: Option<usize>,
}

pub fn midline_profile(map: &OverlayMap) -> MidlineProfile {
    let extent: Vec<usize> = map
        .region
        .axis_iter(Axis(0))
        .map(|col| {
            let first = col.iter().position(|&v| v > 0);
            let last = col.iter().rposition(|&v| v > 0);
            match (first, last) {
                (Some(f), Some(l)) => l - f + 1,
                _ => 0,
            }
        })
        .collect();
    let h_max_mid = extent.iter().copied().max().unwrap_or(0);
    let argmax = (h_max_mid > 0).then(|| extent.iter().position(|&e| e == h_max_mid).unwrap());
    MidlineProfile { extent, h_max_mid, argmax }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientBudget {
    pub patient_id: String,
    pub shape: [usize; 3],
    pub voxels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachBudget {
    pub approach: Approach,
    pub cohort_id: String,
    pub patients: Vec<PatientBudget>,
    pub mean_voxels: f64,
    pub mean_depth: f64,
    /// Relative to the reference approach; `None` without a reference.
    pub voxel_ratio: Option<f64>,
    pub slice_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelBudget {
    /// WV_RAW when present, else BRS_WV.
    pub reference: Option<Approach>,
    pub approaches: Vec<ApproachBudget>,
}

/// Voxels analyzed per patient for each manifest, with ratios against the
/// whole-volume cohort.
pub fn pixel_budget(manifests: &[CohortManifest]) -> PixelBudget {
    let mut approaches: Vec<ApproachBudget> = manifests
        .iter()
        .map(|m| {
            let patients: Vec<PatientBudget> = m
                .patients
                .iter()
                .map(|p| PatientBudget {
                    patient_id: p.patient_id.clone(),
                    shape: p.shape,
                    voxels: p.shape.iter().map(|&n| n as u64).product(),
                })
                .collect();
            let n = patients.len().max(1) as f64;
            ApproachBudget {
                approach: m.approach,
                cohort_id: m.cohort_id.clone(),
                mean_voxels: patients.iter().map(|p| p.voxels as f64).sum::<f64>() / n,
                mean_depth: patients.iter().map(|p| p.shape[2] as f64).sum::<f64>() / n,
                patients,
                voxel_ratio: None,
                slice_ratio: None,
            }
        })
        .collect();
    let reference = [Approach::WvRaw, Approach::BrsWv]
        .into_iter()
        .find(|a| approaches.iter().any(|b| b.approach == *a));
    if let Some(r) = reference {
        let base = approaches.iter().find(|b| b.approach == r).unwrap();
        let (bv, bd) = (base.mean_voxels, base.mean_depth);
        for a in &mut approaches {
            a.voxel_ratio = (bv > 0.0).then(|| a.mean_voxels / bv);
            a.slice_ratio = (bd > 0.0).then(|| a.mean_depth / bd);
        }
    }
    PixelBudget { reference, approaches }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub cohort_id: String,
    pub approach: Approach,
    pub patients: usize,
    pub slices: usize,
    /// `[W, H]` of the maps.
    pub map_size: [usize; 2],
    pub region_total: u64,
    pub lesion_total: u64,
    /// Lesion mass with `x < W/2` (patient left in RAS) and the rest.
    pub lesion_left_half: u64,
    pub lesion_right_half: u64,
    pub x_histogram: AxisHistogram,
    pub y_histogram: AxisHistogram,
    pub midline: MidlineProfile,
    pub crop_height: Option<usize>,
}

pub fn analyze_map(manifest: &CohortManifest, map: &OverlayMap) -> AnalyticsReport {
    let (xh, yh) = axis_histograms(map);
    let half = map.dims()[0] / 2;
    let left: u64 = xh.values[..half].iter().sum();
    AnalyticsReport {
        cohort_id: manifest.cohort_id.clone(),
        approach: manifest.approach,
        patients: map.patients,
        slices: map.slices,
        map_size: map.dims(),
        region_total: map.region_total(),
        lesion_total: map.lesion_total(),
        lesion_left_half: left,
        lesion_right_half: xh.total() - left,
        midline: midline_profile(map),
        x_histogram: xh,
        y_histogram: yh,
        crop_height: manifest.crop_plan.as_ref().map(|p| p.crop_height),
    }
}

pub fn analyze_manifest(manifest: &CohortManifest) -> Result<(AnalyticsReport, OverlayMap)> {
    let map = overlay_from_manifest(manifest)?;
    Ok((analyze_map(manifest, &map), map))
}

/// Writes `overlay.png`, `x_histogram.png`, `y_histogram.png` and
/// `midline.png` into `dir`.
pub fn render_plots(map: &OverlayMap, report: &AnalyticsReport, dir: &Path) -> Result<()> {
    use image::{Rgb, RgbImage};

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let save = |img: RgbImage, name: &str| {
        let path = dir.join(name);
        img.save(&path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    };
    let [w, h] = map.dims();

    // Region counts in gray, lesion counts blended in red.
    let rmax = map.region.iter().copied().max().unwrap_or(0).max(1) as f64;
    let lmax = map.lesion.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut overlay = RgbImage::new(w as u32, h as u32);
    for ((x, y), &r) in map.region.indexed_iter() {
        let g = (r as f64 / rmax * 200.0) as u8;
        let l = map.lesion[[x, y]] as f64 / lmax;
        let px = if l > 0.0 {
            Rgb([(128.0 + 127.0 * l) as u8, (g as f64 * (1.0 - l)) as u8, (g as f64 * (1.0 - l)) as u8])
        } else {
            Rgb([g, g, g])
        };
        overlay.put_pixel(x as u32, y as u32, px);
    }
    save(overlay, "overlay.png")?;

    save(bar_plot(&report.x_histogram.values), "x_histogram.png")?;
    save(bar_plot(&report.y_histogram.values), "y_histogram.png")?;
    let extent: Vec<u64> = report.midline.extent.iter().map(|&e| e as u64).collect();
    save(bar_plot(&extent), "midline.png")?;
    Ok(())
}

fn bar_plot(values: &[u64]) -> image::RgbImage {
    const HEIGHT: u32 = 128;
    let mut img = image::RgbImage::from_pixel(values.len().max(1) as u32, HEIGHT, image::Rgb([255, 255, 255]));
    let max = values.iter().copied().max().unwrap_or(0).max(1) as f64;
    for (i, &v) in values.iter().enumerate() {
        let bar = (v as f64 / max * HEIGHT as f64).round() as u32;
        for y in HEIGHT - bar..HEIGHT {
            img.put_pixel(i as u32, y, image::Rgb([40, 70, 160]));
        }
    }
    img
}
