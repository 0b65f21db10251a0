//! Grid baseline: reflections rasterized to an 11x11 two-channel grid around
//! the object and classified by a small 2-D CNN.

mod gradcheck;
mod io;
mod model;

pub use gradcheck::{grid_gradcheck, grid_margin, GridGradCheck};
pub use io::{GRIDCNN_MAGIC, GRIDCNN_VERSION};
pub use model::{
    conv2d_same, conv2d_same_backward, max_pool_2x2, Conv2dParams, GridCnn, GridCnnConfig, GridCnnGrads, GridTrace,
    FLATTEN_LEN, POOLED_SIZE,
};

use serde::{Deserialize, Serialize};

use crate::preprocess::{to_object_frame, ObjectSample, PreprocessError, STD_FLOOR};

pub const GRID_SIZE: usize = 11;
pub const GRID_CHANNELS: usize = 2;
pub const GRID_CELLS: usize = GRID_SIZE * GRID_SIZE;
/// Side length of the square window around the object, metres.
pub const GRID_EXTENT_M: f64 = 4.0;
pub const CELL_M: f64 = GRID_EXTENT_M / GRID_SIZE as f64;

/// Channel-major cells: `cells[ch * 121 + row * 11 + col]`, row indexed by
/// object-frame y and column by object-frame x.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Channel 0 holds the RCS sum, channel 1 the mean radial velocity.
    pub cells: Vec<f64>,
    pub occupancy: Vec<u32>,
}

impl Grid {
    pub fn empty() -> Self {
        Self {
            cells: vec![0.0; GRID_CHANNELS * GRID_CELLS],
            occupancy: vec![0; GRID_CELLS],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.cells[channel * GRID_CELLS + row * GRID_SIZE + col]
    }

    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.occupancy[row * GRID_SIZE + col]
    }
}

/// Cell index along one axis; `None` outside `[-2, 2)`.
pub fn cell_index(coord: f64) -> Option<usize> {
    let half = GRID_EXTENT_M / 2.0;
    if !(-half..half).contains(&coord) {
        return None;
    }
    Some((((coord + half) / CELL_M).floor() as usize).min(GRID_SIZE - 1))
}

pub fn rasterize(sample: &ObjectSample) -> Grid {
    let mut grid = Grid::empty();
    let mut vr_sum = vec![0.0; GRID_CELLS];
    for refl in &sample.reflections {
        let (x, y) = to_object_frame(refl, &sample.pose);
        let (Some(col), Some(row)) = (cell_index(x), cell_index(y)) else {
            continue;
        };
        let cell = row * GRID_SIZE + col;
        grid.cells[cell] += refl.rcs;
        vr_sum[cell] += refl.v_r;
        grid.occupancy[cell] += 1;
    }
    for (cell, &n) in grid.occupancy.iter().enumerate() {
        if n > 0 {
            grid.cells[GRID_CELLS + cell] = vr_sum[cell] / n as f64;
        }
    }
    grid
}

/// Per-channel scale; cells are divided by it, so empty cells stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNorm {
    pub std: [f64; GRID_CHANNELS],
}

impl GridNorm {
    pub fn identity() -> Self {
        Self {
            std: [1.0; GRID_CHANNELS],
        }
    }

    pub fn apply(&self, grid: &Grid) -> Vec<f32> {
        grid.cells
            .iter()
            .enumerate()
            .map(|(i, &v)| (v / self.std[i / GRID_CELLS]) as f32)
            .collect()
    }
}

/// Population standard deviation per channel over every cell of the given
/// grids. Pass the training split only.
pub fn compute_grid_norm(grids: &[Grid]) -> Result<GridNorm, PreprocessError> {
    if grids.is_empty() {
        return Err(PreprocessError::EmptyTrainingSet);
    }
    let n = (grids.len() * GRID_CELLS) as f64;
    let std = std::array::from_fn(|ch| {
        let values = || {
            grids
                .iter()
                .flat_map(|g| &g.cells[ch * GRID_CELLS..(ch + 1) * GRID_CELLS])
        };
        let mean = values().sum::<f64>() / n;
        let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        var.sqrt().max(STD_FLOOR)
    });
    Ok(GridNorm { std })
}

/// Rasterized, scaled grids for every sample, paired with class indices.
pub fn prepare_grids(samples: &[ObjectSample], norm: &GridNorm) -> Vec<(Vec<f32>, usize)> {
    samples
        .iter()
        .map(|s| (norm.apply(&rasterize(s)), s.class_label.index()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{ObjectClass, ObjectPose, Reflection};

    fn sample_at(points: &[(f64, f64, f64, f64)]) -> ObjectSample {
        ObjectSample {
            track_id: "t".into(),
            class_label: ObjectClass::Car,
            pose: ObjectPose {
                x: 20.0,
                y: 0.0,
                heading: 0.0,
            },
            reflections: points
                .iter()
                .map(|&(x, y, rcs, v_r)| Reflection {
                    x_world: 20.0 + x,
                    y_world: y,
                    rcs,
                    range_m: (20.0 + x).hypot(y),
                    v_r,
                    azimuth: y.atan2(20.0 + x),
                })
                .collect(),
        }
    }

    #[test]
    fn center_reflection_hits_center_cell() {
        let grid = rasterize(&sample_at(&[(0.0, 0.0, 3.5, -1.25)]));
        assert_eq!(grid.get(0, 5, 5), 3.5);
        assert_eq!(grid.get(1, 5, 5), -1.25);
        assert_eq!(grid.count(5, 5), 1);
        assert_eq!(grid.cells.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn cell_index_formula() {
        // floor(3.9 * 11 / 4) = floor(10.725) = 10
        assert_eq!(cell_index(1.9), Some(10));
        assert_eq!(cell_index(-2.0), Some(0));
        assert_eq!(cell_index(0.0), Some(5));
        assert_eq!(cell_index(2.0), None);
        assert_eq!(cell_index(2.5), None);
        assert_eq!(cell_index(-2.01), None);
    }

    #[test]
    fn outside_window_is_dropped() {
        let grid = rasterize(&sample_at(&[(2.5, 0.0, 3.0, 1.0)]));
        assert_eq!(grid, Grid::empty());
    }

    #[test]
    fn shared_cell_sums_rcs_and_averages_velocity() {
        let grid = rasterize(&sample_at(&[
            (0.0, 0.0, 1.0, 1.0),
            (0.05, 0.05, 2.0, 2.0),
            (1.9, 0.0, 5.0, 5.0),
        ]));
        assert_eq!(grid.get(0, 5, 5), 3.0);
        assert_eq!(grid.get(1, 5, 5), 1.5);
        assert_eq!(grid.count(5, 5), 2);
        assert_eq!(grid.get(0, 5, 10), 5.0);
    }

    #[test]
    fn grid_norm_keeps_empty_cells_zero() {
        let grids = vec![rasterize(&sample_at(&[(0.0, 0.0, 11.0, 11.0)]))];
        let norm = compute_grid_norm(&grids).unwrap();
        let scaled = norm.apply(&grids[0]);
        assert_eq!(scaled.iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(compute_grid_norm(&[]), Err(PreprocessError::EmptyTrainingSet));
    }
}
