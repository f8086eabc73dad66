use std::fmt;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction a voxel axis points in world (RAS+) space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisCode {
    L,
    R,
    P,
    A,
    I,
    S,
}

impl AxisCode {
    fn from_world(world_axis: usize, positive: bool) -> Self {
        match (world_axis, positive) {
            (0, true) => AxisCode::R,
            (0, false) => AxisCode::L,
            (1, true) => AxisCode::A,
            (1, false) => AxisCode::P,
            (2, true) => AxisCode::S,
            _ => AxisCode::I,
        }
    }

    fn as_char(self) -> char {
        match self {
            AxisCode::L => 'L',
            AxisCode::R => 'R',
            AxisCode::P => 'P',
            AxisCode::A => 'A',
            AxisCode::I => 'I',
            AxisCode::S => 'S',
        }
    }
}

/// Axis-direction code triple, e.g. `RAS` or `LPS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Orientation(pub [AxisCode; 3]);

impl Orientation {
    pub const RAS: Orientation = Orientation([AxisCode::R, AxisCode::A, AxisCode::S]);
    pub const LPS: Orientation = Orientation([AxisCode::L, AxisCode::P, AxisCode::S]);

    pub fn is_ras(&self) -> bool {
        *self == Self::RAS
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.0 {
            write!(f, "{}", c.as_char())?;
        }
        Ok(())
    }
}

/// Voxel-to-world transform, stored as the top three rows of a 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [[f64; 4]; 3]);

/// Relative size below which an off-axis affine entry counts as zero.
const OBLIQUE_TOLERANCE: f64 = 1e-5;

impl Affine {
    /// Diagonal RAS affine with the origin at voxel (0, 0, 0).
    pub fn from_spacing(spacing: [f64; 3]) -> Self {
        Affine([
            [spacing[0], 0.0, 0.0, 0.0],
            [0.0, spacing[1], 0.0, 0.0],
            [0.0, 0.0, spacing[2], 0.0],
        ])
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    fn set_column(&mut self, j: usize, col: [f64; 3]) {
        for (i, v) in col.into_iter().enumerate() {
            self.0[i][j] = v;
        }
    }

    pub fn translation(&self) -> [f64; 3] {
        self.column(3)
    }

    /// World coordinates (mm) of a voxel index.
    pub fn apply(&self, ijk: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, row) in self.0.iter().enumerate() {
            out[i] = row[0] * ijk[0] + row[1] * ijk[1] + row[2] * ijk[2] + row[3];
        }
        out
    }

    /// For each voxel axis, the world axis it runs along and whether it
    /// runs in the positive direction. Fails for oblique transforms.
    fn axis_map(&self) -> Result<[(usize, bool); 3]> {
        let mut out = [(0usize, true); 3];
        let mut used = [false; 3];
        for (j, slot) in out.iter_mut().enumerate() {
            let col = self.column(j);
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Orientation(format!("degenerate affine column {j}")));
            }
            let dominant = (0..3)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
                .unwrap_or(0);
            let off_axis = (0..3)
                .filter(|&i| i != dominant)
                .any(|i| col[i].abs() > OBLIQUE_TOLERANCE * norm);
            if off_axis || used[dominant] {
                return Err(Error::Orientation(
                    "oblique orientation is not supported (axis-aligned grids only)".into(),
                ));
            }
            used[dominant] = true;
            *slot = (dominant, col[dominant] > 0.0);
        }
        Ok(out)
    }

    pub fn orientation(&self) -> Result<Orientation> {
        let map = self.axis_map()?;
        Ok(Orientation(map.map(|(axis, pos)| AxisCode::from_world(axis, pos))))
    }
}

/// Permute and flip `data` so its axes run R, A, S. Returns the reordered
/// array, the matching affine and the permutation applied to per-axis
/// metadata (new axis `k` came from old axis `perm[k]`).
pub(crate) fn reorient_to_ras<T>(
    data: Array3<T>,
    affine: &Affine,
) -> Result<(Array3<T>, Affine, [usize; 3])> {
    let map = affine.axis_map()?;
    let mut perm = [0usize; 3];
    for (voxel_axis, &(world_axis, _)) in map.iter().enumerate() {
        perm[world_axis] = voxel_axis;
    }

    let mut data = data.permuted_axes(perm);
    let mut out = *affine;
    for k in 0..3 {
        out.set_column(k, affine.column(perm[k]));
    }
    for k in 0..3 {
        let (_, positive) = map[perm[k]];
        if positive {
            continue;
        }
        let n = data.len_of(Axis(k));
        data.invert_axis(Axis(k));
        let col = out.column(k);
        let mut t = out.translation();
        for i in 0..3 {
            t[i] += col[i] * (n as f64 - 1.0);
        }
        out.set_column(3, t);
        out.set_column(k, col.map(|v| -v));
    }
    Ok((data, out, perm))
}
