use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{Grid, MaskGrid, VolumeGrid};

/// Output slice `i` is a copy of source slice `source_index[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OversampleMap {
    pub target_depth: usize,
    pub source_index: Vec<usize>,
}

impl OversampleMap {
    pub fn identity(depth: usize) -> Self {
        OversampleMap {
            target_depth: depth,
            source_index: (0..depth).collect(),
        }
    }

    /// Draws `target_depth - depth` extra copies of uniformly chosen source
    /// slices; each copy sits right after its source so slice order is
    /// preserved.
    pub fn random(depth: usize, target_depth: usize, seed: u64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidInput("cannot oversample an empty slice stack".into()));
        }
        if target_depth < depth {
            return Err(Error::InvalidInput(format!(
                "target depth {target_depth} is smaller than current depth {depth}"
            )));
        }
        let mut copies = vec![1usize; depth];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in depth..target_depth {
            copies[rng.gen_range(0..depth)] += 1;
        }
        let source_index = copies
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat(s).take(n))
            .collect();
        Ok(OversampleMap {
            target_depth,
            source_index,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.source_index.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn source_depth(&self) -> usize {
        self.source_index.last().map_or(0, |&s| s + 1)
    }

    /// Builds the oversampled stack of `grid`.
    pub fn apply<T: Clone>(&self, grid: &Grid<T>) -> Result<Grid<T>> {
        let depth = grid.shape()[2];
        if let Some(&bad) = self.source_index.iter().find(|&&s| s >= depth) {
            return Err(Error::InvalidInput(format!(
                "oversampling map references slice {bad} of a {depth}-slice volume"
            )));
        }
        Ok(grid.with_data(grid.data.select(Axis(2), &self.source_index)))
    }

    pub fn apply_mask(&self, mask: &MaskGrid) -> Result<MaskGrid> {
        MaskGrid::from_grid(self.apply(mask)?)
    }
}

/// Randomly duplicates slices of `vol` until it has `target_depth` slices.
pub fn oversample_depth(
    vol: &VolumeGrid,
    target_depth: usize,
    seed: u64,
) -> Result<(VolumeGrid, OversampleMap)> {
    let map = OversampleMap::random(vol.shape()[2], target_depth, seed)?;
    Ok((map.apply(vol)?, map))
}
