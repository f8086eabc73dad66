//! Connected-component labeling and the false-positive / false-negative
//! lesion volume analysis.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{check_same_geometry, MaskGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "18")]
    Eighteen,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in raster order (z slowest,
    /// x fastest); half of the full symmetric neighbourhood.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=0 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if before && self.admits([dx, dy, dz]) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    pub(crate) fn admits(self, d: [isize; 3]) -> bool {
        let nonzero = d.iter().filter(|&&v| v != 0).count();
        match self {
            Connectivity::Six => nonzero == 1,
            Connectivity::Eighteen => (1..=2).contains(&nonzero),
            Connectivity::TwentySix => (1..=3).contains(&nonzero),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let next = parent[x as usize];
        parent[x as usize] = parent[next as usize];
        x = next;
    }
    x
}

/// Labels foreground voxels (value != 0) with component ids `1..=n`,
/// numbered in raster order of each component's first voxel. Returns the
/// label volume and `n`.
pub fn label_components(mask: ArrayView3<'_, u8>, connectivity: Connectivity) -> (Array3<u32>, usize) {
    let (w, h, d) = mask.dim();
    let mut labels = Array3::<u32>::zeros((w, h, d));
    let mut parent: Vec<u32> = vec![0];
    let offsets = connectivity.backward_offsets();

    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if mask[[x, y, z]] == 0 {
                    continue;
                }
                let mut current = 0u32;
                for off in &offsets {
                    let (nx, ny, nz) = (x as isize + off[0], y as isize + off[1], z as isize + off[2]);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let l = labels[[nx as usize, ny as usize, nz as usize]];
                    if l == 0 {
                        continue;
                    }
                    if current == 0 {
                        current = find(&mut parent, l);
                    } else {
                        let (a, b) = (find(&mut parent, current), find(&mut parent, l));
                        if a != b {
                            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                            parent[hi as usize] = lo;
                            current = lo;
                        }
                    }
                }
                if current == 0 {
                    current = parent.len() as u32;
                    parent.push(current);
                }
                labels[[x, y, z]] = current;
            }
        }
    }

    // Compact roots to consecutive ids in order of first appearance.
    let mut compact = vec![0u32; parent.len()];
    let mut next = 0u32;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let l = labels[[x, y, z]];
                if l == 0 {
                    continue;
                }
                let root = find(&mut parent, l) as usize;
                if compact[root] == 0 {
                    next += 1;
                    compact[root] = next;
                }
                labels[[x, y, z]] = compact[root];
            }
        }
    }
    (labels, next as usize)
}

/// Physical-volume bins with half-open intervals: `[edge_i, edge_{i+1})`,
/// plus an open bin below the first edge and one at or above the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeBins {
    pub edges_mm3: Vec<f64>,
}

impl Default for VolumeBins {
    fn default() -> Self {
        VolumeBins {
            edges_mm3: vec![10.0, 20.0],
        }
    }
}

impl VolumeBins {
    pub fn new(edges_mm3: Vec<f64>) -> Result<Self> {
        if edges_mm3.windows(2).any(|w| !(w[0] < w[1])) || edges_mm3.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bin edges must be finite and strictly increasing, got {edges_mm3:?}"
            )));
        }
        Ok(VolumeBins { edges_mm3 })
    }

    pub fn len(&self) -> usize {
        self.edges_mm3.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bin_of(&self, volume_mm3: f64) -> usize {
        self.edges_mm3.iter().filter(|&&e| volume_mm3 >= e).count()
    }

    pub fn labels(&self) -> Vec<String> {
        let e = &self.edges_mm3;
        (0..self.len())
            .map(|i| match (i, e.len()) {
                (_, 0) => "all".to_string(),
                (0, _) => format!("V<{}", e[0]),
                (i, n) if i == n => format!("V>={}", e[n - 1]),
                (i, _) => format!("{}<=V<{}", e[i - 1], e[i]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub voxels: usize,
    pub volume_mm3: f64,
    pub bin: usize,
    pub bin_label: String,
    /// Mean voxel index `(x, y, z)`.
    pub centroid: [f64; 3],
    /// Inclusive `[first, last]` slice.
    pub slice_range: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// Predicted components sharing no voxel with the ground truth.
    pub false_positives: Vec<Component>,
    /// Ground-truth components sharing no voxel with the prediction.
    pub false_negatives: Vec<Component>,
    pub fp_bin_counts: Vec<usize>,
    pub fn_bin_counts: Vec<usize>,
    pub bin_labels: Vec<String>,
    pub bins: VolumeBins,
    pub connectivity: Connectivity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub bin_rule: String,
}

struct Accum {
    voxels: usize,
    sum: [f64; 3],
    z_range: [usize; 2],
    touches_other: bool,
}

/// Components of `of` that share no voxel with `other`.
fn unmatched_components(
    of: ArrayView3<'_, u8>,
    other: ArrayView3<'_, u8>,
    connectivity: Connectivity,
    voxel_mm3: f64,
    bins: &VolumeBins,
) -> Vec<Component> {
    let (labels, n) = label_components(of, connectivity);
    let mut acc: Vec<Accum> = (0..n)
        .map(|_| Accum {
            voxels: 0,
            sum: [0.0; 3],
            z_range: [usize::MAX, 0],
            touches_other: false,
        })
        .collect();
    for ((x, y, z), &l) in labels.indexed_iter() {
        if l == 0 {
            continue;
        }
        let a = &mut acc[l as usize - 1];
        a.voxels += 1;
        a.sum[0] += x as f64;
        a.sum[1] += y as f64;
        a.sum[2] += z as f64;
        a.z_range[0] = a.z_range[0].min(z);
        a.z_range[1] = a.z_range[1].max(z);
        if other[[x, y, z]] != 0 {
            a.touches_other = true;
        }
    }
    acc.into_iter()
        .filter(|a| !a.touches_other)
        .map(|a| {
            let volume_mm3 = a.voxels as f64 * voxel_mm3;
            let bin = bins.bin_of(volume_mm3);
            Component {
                voxels: a.voxels,
                volume_mm3,
                bin,
                bin_label: bins.labels()[bin].clone(),
                centroid: a.sum.map(|s| s / a.voxels as f64),
                slice_range: a.z_range,
            }
        })
        .collect()
}

/// Counts missed and spurious lesions by physical volume.
pub fn component_analysis(
    pred: &MaskGrid,
    gt: &MaskGrid,
    threshold: Option<f64>,
    bins: &VolumeBins,
    connectivity: Connectivity,
) -> Result<ComponentReport> {
    check_same_geometry(pred, gt, "component analysis")?;
    let voxel_mm3 = gt.voxel_volume_mm3();
    let fp = unmatched_components(pred.data.view(), gt.data.view(), connectivity, voxel_mm3, bins);
    let fneg = unmatched_components(gt.data.view(), pred.data.view(), connectivity, voxel_mm3, bins);
    let count = |cs: &[Component]| {
        let mut c = vec![0usize; bins.len()];
        for comp in cs {
            c[comp.bin] += 1;
        }
        c
    };
    Ok(ComponentReport {
        fp_bin_counts: count(&fp),
        fn_bin_counts: count(&fneg),
        false_positives: fp,
        false_negatives: fneg,
        bin_labels: bins.labels(),
        bins: bins.clone(),
        connectivity,
        threshold,
        bin_rule: "half-open [lower, upper)".into(),
    })
}
