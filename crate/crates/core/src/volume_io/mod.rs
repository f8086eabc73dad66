//! Volumetric grids, NIfTI I/O, RAS canonicalization and the cohort
//! manifest.
//!
//! Arrays are indexed `(x, y, z)`: x runs left-right (width `W`), y runs
//! along the anterior-posterior axis (height `H`) and z is the slice index
//! (depth `D`).

mod manifest;
mod nifti;
mod orientation;

use std::ops::Deref;
use std::path::Path;

use ndarray::{Array3, Zip};

pub use manifest::{Approach, CohortManifest, PatientEntry, MANIFEST_SCHEMA_VERSION};
pub use orientation::{Affine, AxisCode, Orientation};

use crate::error::{Error, Result};

/// Tolerance (mm) when comparing voxel spacings of two grids.
pub const SPACING_TOLERANCE: f64 = 1e-4;

/// A 3D array with voxel spacing and optional orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub data: Array3<T>,
    /// Voxel size in mm along x, y, z.
    pub spacing: [f64; 3],
    /// Voxel-to-world transform; `None` when the source carried no
    /// orientation metadata.
    pub affine: Option<Affine>,
}

/// Intensity image.
pub type VolumeGrid = Grid<f32>;

impl<T> Grid<T> {
    /// A grid with a RAS-aligned affine at the origin.
    pub fn new(data: Array3<T>, spacing: [f64; 3]) -> Result<Self> {
        let grid = Grid {
            data,
            spacing,
            affine: Some(Affine::from_spacing(spacing)),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_affine(mut self, affine: Option<Affine>) -> Self {
        self.affine = affine;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.data.iter().next().is_none() {
            return Err(Error::InvalidInput(format!(
                "grid dimensions must be >= 1, got {:?}",
                self.data.dim()
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "voxel spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        Ok(())
    }

    /// `[W, H, D]`.
    pub fn shape(&self) -> [usize; 3] {
        let (w, h, d) = self.data.dim();
        [w, h, d]
    }

    pub fn orientation(&self) -> Result<Orientation> {
        self.affine
            .as_ref()
            .ok_or_else(|| Error::Orientation("missing orientation metadata".into()))?
            .orientation()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Same grid geometry with new voxel data.
    pub fn with_data<U>(&self, data: Array3<U>) -> Grid<U> {
        Grid {
            data,
            spacing: self.spacing,
            affine: self.affine,
        }
    }

    /// Reorders axes so the grid is in RAS. Voxel world coordinates are
    /// preserved; oblique or missing orientations are rejected.
    pub fn canonicalize_ras(self) -> Result<Self> {
        let affine = self
            .affine
            .ok_or_else(|| Error::Orientation("missing orientation metadata".into()))?;
        if affine.orientation()?.is_ras() {
            return Ok(self);
        }
        let (data, affine, perm) = orientation::reorient_to_ras(self.data, &affine)?;
        Ok(Grid {
            data,
            spacing: perm.map(|k| self.spacing[k]),
            affine: Some(affine),
        })
    }
}

/// Fails unless `a` and `b` share shape and spacing.
pub fn check_same_geometry<A, B>(a: &Grid<A>, b: &Grid<B>, context: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Geometry(format!(
            "{context}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !spacing_matches(a.spacing, b.spacing) {
        return Err(Error::Geometry(format!(
            "{context}: spacing {:?} vs {:?}",
            a.spacing, b.spacing
        )));
    }
    Ok(())
}

pub(crate) fn spacing_matches(a: [f64; 3], b: [f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= SPACING_TOLERANCE)
}

/// Binary mask; every voxel is 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid(Grid<u8>);

impl MaskGrid {
    pub fn new(data: Array3<u8>, spacing: [f64; 3]) -> Result<Self> {
        Self::from_grid(Grid::new(data, spacing)?)
    }

    pub fn from_grid(grid: Grid<u8>) -> Result<Self> {
        if let Some(v) = grid.data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("mask is not binary (found value {v})")));
        }
        grid.validate()?;
        Ok(MaskGrid(grid))
    }

    /// Mask from a predicate over voxel values.
    pub fn from_volume(vol: &VolumeGrid, pred: impl Fn(f32) -> bool) -> Self {
        MaskGrid(vol.with_data(vol.data.mapv(|v| u8::from(pred(v)))))
    }

    /// All-zero mask with the geometry of `like`.
    pub fn zeros_like<T>(like: &Grid<T>) -> Self {
        let (w, h, d) = like.data.dim();
        MaskGrid(like.with_data(Array3::zeros((w, h, d))))
    }

    pub fn into_grid(self) -> Grid<u8> {
        self.0
    }

    pub fn count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_volume(&self) -> VolumeGrid {
        self.0.with_data(self.0.data.mapv(f32::from))
    }

    pub fn canonicalize_ras(self) -> Result<Self> {
        Ok(MaskGrid(self.0.canonicalize_ras()?))
    }

    pub fn with_affine(self, affine: Option<Affine>) -> Self {
        MaskGrid(self.0.with_affine(affine))
    }
}

impl Deref for MaskGrid {
    type Target = Grid<u8>;

    fn deref(&self) -> &Grid<u8> {
        &self.0
    }
}

/// Reads a 3D NIfTI-1 image (`.nii` or `.nii.gz`).
pub fn load_volume(path: impl AsRef<Path>) -> Result<VolumeGrid> {
    let path = path.as_ref();
    let raw = nifti::read(path)?;
    Ok(Grid {
        data: raw.data,
        spacing: raw.spacing,
        affine: raw.affine,
    })
}

/// Reads a NIfTI image and checks that it is binary.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskGrid> {
    let path = path.as_ref();
    let vol = load_volume(path)?;
    if let Some(v) = vol.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::nifti(path, format!("mask is not binary (found value {v})")));
    }
    Ok(MaskGrid::from_volume(&vol, |v| v != 0.0))
}

/// Writes an image as little-endian float32.
pub fn save_volume(vol: &VolumeGrid, path: impl AsRef<Path>) -> Result<()> {
    nifti::write(path.as_ref(), vol.data.view(), vol.spacing, vol.affine.as_ref())
}

/// Writes a mask as uint8.
pub fn save_mask(mask: &MaskGrid, path: impl AsRef<Path>) -> Result<()> {
    nifti::write(path.as_ref(), mask.data.view(), mask.spacing, mask.affine.as_ref())
}

/// Canonicalizes an intensity volume to RAS.
pub fn canonicalize_ras(vol: VolumeGrid) -> Result<VolumeGrid> {
    vol.canonicalize_ras()
}

/// True when both volumes have the same shape and bit-identical voxels.
pub fn bit_identical(a: &VolumeGrid, b: &VolumeGrid) -> bool {
    a.shape() == b.shape()
        && Zip::from(&a.data)
            .and(&b.data)
            .all(|x, y| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(shape: (usize, usize, usize), seed: u64) -> VolumeGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn(shape, |_| rng.gen_range(-1000.0f32..1000.0));
        VolumeGrid::new(data, [0.7, 0.7, 2.0]).unwrap()
    }

    #[test]
    fn round_trip_random_float_volume() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["v.nii", "v.nii.gz"] {
            let vol = random_volume((64, 64, 20), 1);
            let path = dir.path().join(name);
            save_volume(&vol, &path).unwrap();
            let back = load_volume(&path).unwrap();
            assert_eq!(back.shape(), [64, 64, 20]);
            assert!(bit_identical(&vol, &back));
            for i in 0..3 {
                assert!((back.spacing[i] - vol.spacing[i]).abs() < 1e-6);
            }
            assert_eq!(back.orientation().unwrap(), Orientation::RAS);
        }
    }

    #[test]
    fn round_trip_preserves_special_floats() {
        let dir = tempfile::tempdir().unwrap();
        let mut vol = random_volume((3, 2, 2), 2);
        vol.data[[0, 0, 0]] = -0.0;
        vol.data[[1, 0, 0]] = f32::MIN_POSITIVE / 2.0;
        vol.data[[2, 0, 0]] = f32::INFINITY;
        let path = dir.path().join("s.nii");
        save_volume(&vol, &path).unwrap();
        assert!(bit_identical(&vol, &load_volume(&path).unwrap()));
    }

    #[test]
    fn round_trip_mask_stays_binary() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array3::from_shape_fn((9, 7, 5), |(x, y, z)| u8::from((x + y * z) % 3 == 0));
        let mask = MaskGrid::new(data, [1.0, 1.0, 1.0]).unwrap();
        let path = dir.path().join("m.nii.gz");
        save_mask(&mask, &path).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(back, mask);
        assert!(back.data.iter().all(|&v| v <= 1));
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load_volume("/nonexistent/dir/vol.nii").unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
        assert!(err.to_string().contains("file not found"));
        assert!(err.to_string().contains("/nonexistent/dir/vol.nii"));
    }

    #[test]
    fn four_dimensional_file_rejected() {
        // Extend a 3D file into a 2-frame time series by patching the header.
        let dir = tempfile::tempdir().unwrap();
        let vol = random_volume((4, 3, 2), 3);
        let header = nifti::header_for::<f32>([4, 3, 2], vol.spacing, vol.affine.as_ref()).unwrap();
        let mut bytes = nifti::encode(&header, vol.data.view());
        let payload = bytes[nifti::VOX_OFFSET..].to_vec();
        bytes.extend_from_slice(&payload);
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        bytes[48..50].copy_from_slice(&2i16.to_le_bytes());
        let path = dir.path().join("ts.nii");
        nifti::write_bytes(&path, &bytes).unwrap();

        let err = load_volume(&path).unwrap_err();
        assert!(err.to_string().contains("expected 3D volume"), "{err}");
        assert!(err.to_string().contains("ts.nii"));
    }

    #[test]
    fn singleton_fourth_dimension_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let vol = random_volume((4, 3, 2), 4);
        let header = nifti::header_for::<f32>([4, 3, 2], vol.spacing, vol.affine.as_ref()).unwrap();
        let mut bytes = nifti::encode(&header, vol.data.view());
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        let path = dir.path().join("t1.nii");
        nifti::write_bytes(&path, &bytes).unwrap();
        assert!(bit_identical(&load_volume(&path).unwrap(), &vol));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = random_volume((2, 2, 2), 5);
        let header = nifti::header_for::<f32>([2, 2, 2], vol.spacing, None).unwrap();
        let mut bytes = nifti::encode(&header, vol.data.view());
        // complex64
        bytes[70..72].copy_from_slice(&32i16.to_le_bytes());
        let path = dir.path().join("c.nii");
        nifti::write_bytes(&path, &bytes).unwrap();
        let err = load_volume(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported datatype"), "{err}");
    }

    #[test]
    fn int16_big_endian_with_scaling_is_read() {
        let mut b = vec![0u8; nifti::VOX_OFFSET];
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_be_bytes());
        b[72..74].copy_from_slice(&16i16.to_be_bytes());
        for (i, p) in [1f32, 1.0, 1.0, 1.0].iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_be_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_be_bytes());
        b[112..116].copy_from_slice(&2f32.to_be_bytes());
        b[116..120].copy_from_slice(&1f32.to_be_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(&(-3i16).to_be_bytes());
        b.extend_from_slice(&7i16.to_be_bytes());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.nii");
        std::fs::write(&path, b).unwrap();
        let vol = load_volume(&path).unwrap();
        assert_eq!(vol.data.iter().copied().collect::<Vec<_>>(), vec![-5.0, 15.0]);
        assert!(vol.affine.is_none());
        assert!(matches!(vol.orientation(), Err(Error::Orientation(_))));
    }

    #[test]
    fn save_into_read_only_location_fails() {
        let vol = random_volume((2, 2, 2), 6);
        let err = save_volume(&vol, "/proc/roiforge-no-such/vol.nii").unwrap_err();
        assert!(matches!(err, Error::Io { .. } | Error::NotFound(_)));

        let dir = tempfile::tempdir().unwrap();
        let ro = dir.path().join("ro");
        std::fs::create_dir(&ro).unwrap();
        let mut perms = std::fs::metadata(&ro).unwrap().permissions();
        perms.set_readonly(true);
        std::fs::set_permissions(&ro, perms).unwrap();
        let result = save_volume(&vol, ro.join("vol.nii"));
        // Root ignores directory permissions; only assert where they apply.
        let writable = std::fs::write(ro.join("probe"), b"x").is_ok();
        if !writable {
            assert!(result.is_err());
        }
    }

    #[test]
    fn canonicalize_ras_input_is_identity() {
        let vol = random_volume((5, 4, 3), 7);
        let out = vol.clone().canonicalize_ras().unwrap();
        assert_eq!(out, vol);
    }

    fn lps_volume() -> VolumeGrid {
        let vol = random_volume((5, 4, 3), 8);
        vol.with_affine(Some(Affine([
            [-0.7, 0.0, 0.0, 40.0],
            [0.0, -0.7, 0.0, 30.0],
            [0.0, 0.0, 2.0, -10.0],
        ])))
    }

    #[test]
    fn canonicalize_lps_flips_x_and_y() {
        let vol = lps_volume();
        let src_affine = vol.affine.unwrap();
        let out = vol.clone().canonicalize_ras().unwrap();
        let dst_affine = out.affine.unwrap();
        assert_eq!(out.orientation().unwrap(), Orientation::RAS);
        assert_eq!(out.spacing, vol.spacing);
        assert_eq!(out.shape(), vol.shape());

        // Corners map to the same world points through both affines.
        let [w, h, d] = vol.shape();
        for (x, y, z) in [(0, 0, 0), (w - 1, 0, 0), (0, h - 1, d - 1), (w - 1, h - 1, 0)] {
            let world = src_affine.apply([x as f64, y as f64, z as f64]);
            let (nx, ny, nz) = (w - 1 - x, h - 1 - y, z);
            let world2 = dst_affine.apply([nx as f64, ny as f64, nz as f64]);
            for i in 0..3 {
                assert!((world[i] - world2[i]).abs() < 1e-9);
            }
            assert_eq!(vol.data[[x, y, z]], out.data[[nx, ny, nz]]);
        }
    }

    #[test]
    fn canonicalize_without_orientation_fails() {
        let vol = random_volume((2, 2, 2), 9).with_affine(None);
        assert!(matches!(vol.canonicalize_ras(), Err(Error::Orientation(_))));
    }

    #[test]
    fn non_binary_mask_rejected() {
        let data = Array3::from_elem((2, 2, 2), 2u8);
        assert!(MaskGrid::new(data, [1.0; 3]).is_err());
    }

    #[test]
    fn zero_spacing_rejected() {
        assert!(VolumeGrid::new(Array3::zeros((2, 2, 2)), [1.0, 0.0, 1.0]).is_err());
        assert!(VolumeGrid::new(Array3::zeros((0, 2, 2)), [1.0; 3]).is_err());
    }

    fn axis_aligned_affine() -> impl Strategy<Value = Affine> {
        (
            Just([0usize, 1, 2]).prop_shuffle(),
            proptest::array::uniform3(any::<bool>()),
            proptest::array::uniform3(0.3f64..3.0),
            proptest::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(perm, flips, scale, origin)| {
                let mut m = [[0.0; 4]; 3];
                for j in 0..3 {
                    m[perm[j]][j] = if flips[j] { -scale[j] } else { scale[j] };
                }
                for i in 0..3 {
                    m[i][3] = origin[i];
                }
                Affine(m)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn canonicalize_preserves_world_coordinates(
            affine in axis_aligned_affine(),
            shape in proptest::array::uniform3(1usize..6),
            seed in any::<u64>(),
        ) {
            let spacing = [0, 1, 2].map(|j| affine.column(j).iter().map(|v| v * v).sum::<f64>().sqrt());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |_| rng.gen::<f32>());
            let vol = VolumeGrid::new(data, spacing).unwrap().with_affine(Some(affine));

            let once = vol.clone().canonicalize_ras().unwrap();
            prop_assert_eq!(once.orientation().unwrap(), Orientation::RAS);

            // Every source voxel lands at the output voxel with the same world point.
            let dst = once.affine.unwrap();
            for ((x, y, z), &v) in vol.data.indexed_iter() {
                let world = affine.apply([x as f64, y as f64, z as f64]);
                let mut idx = [0usize; 3];
                for k in 0..3 {
                    let col = dst.column(k);
                    let t = dst.translation();
                    idx[k] = ((world[k] - t[k]) / col[k]).round() as usize;
                }
                prop_assert_eq!(once.data[idx].to_bits(), v.to_bits());
            }

            // Idempotent, and the value multiset is unchanged.
            let twice = once.clone().canonicalize_ras().unwrap();
            prop_assert_eq!(&twice, &once);
            let mut a: Vec<u32> = vol.data.iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = once.data.iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn save_load_round_trip_with_orientation(
            affine in axis_aligned_affine(),
            seed in any::<u64>(),
        ) {
            let spacing = [0, 1, 2].map(|j| affine.column(j).iter().map(|v| v * v).sum::<f64>().sqrt());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array3::from_shape_fn((3, 4, 2), |_| rng.gen::<f32>());
            let vol = VolumeGrid::new(data, spacing).unwrap().with_affine(Some(affine));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("o.nii");
            save_volume(&vol, &path).unwrap();
            let back = load_volume(&path).unwrap();
            prop_assert!(bit_identical(&vol, &back));
            prop_assert_eq!(back.orientation().unwrap(), vol.orientation().unwrap());
        }
    }
}
