//! End-to-end gradient checks of both networks on random inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gridcnn::{grid_gradcheck, grid_margin, GridCnn, GridCnnConfig, GRID_CELLS, GRID_CHANNELS};
use crate::nn::{GradCheckEntry, Mask, Matrix};
use crate::preprocess::{PaddedInput, N_FEATURES};
use crate::reflectnet::{gradcheck, input_margin, ReflectNet, ReflectNetConfig};
use crate::seed;

/// Minimum distance from a ReLU or pooling kink for a DEEPREFLECS sample.
pub const REFLECTNET_MARGIN: f64 = 1e-3;
/// Same for GRIDCNN; perturbed kinks are also detected and redrawn there.
pub const GRIDCNN_MARGIN: f64 = 1e-4;
const MAX_DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityEntry {
    pub samples: usize,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst: Option<GradCheckEntry>,
    /// Inputs discarded for lying too close to a kink.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub h: f64,
    pub seed: u64,
    pub deepreflecs: FidelityEntry,
    pub gridcnn: FidelityEntry,
}

impl FidelityReport {
    pub fn max_relative_error(&self) -> f64 {
        self.deepreflecs.max_relative_error.max(self.gridcnn.max_relative_error)
    }
}

fn fold(entry: &mut FidelityEntry, report: crate::nn::GradCheckReport) {
    if report.max_relative_error >= entry.max_relative_error {
        entry.max_relative_error = report.max_relative_error;
        entry.worst = report.worst().cloned();
    }
    entry.samples += 1;
}

fn empty_entry(parameters: usize) -> FidelityEntry {
    FidelityEntry {
        samples: 0,
        parameters,
        max_relative_error: 0.0,
        worst: None,
        redraws: 0,
    }
}

fn too_many_draws(what: &str) -> crate::Error {
    crate::Error::Invalid(format!("no {what} input clear of kinks after {MAX_DRAWS} draws"))
}

/// Central differences with step `h` in double precision, dropout off, for
/// every parameter of both default networks on `samples` random inputs each.
/// Biases are randomized so that bias gradients are exercised away from zero.
pub fn gradient_fidelity(samples: usize, seed_value: u64, h: f64) -> Result<FidelityReport> {
    let mut rng = seed::rng(seed_value, &[seed::label("gradient_fidelity")]);

    let mut net = ReflectNet::<f64>::new(ReflectNetConfig::default(), seed_value);
    for b in net
        .conv1
        .bias
        .iter_mut()
        .chain(net.conv2.bias.iter_mut())
        .chain(net.head.bias.iter_mut())
    {
        *b = rng.gen_range(-0.3..0.3);
    }
    let pad = net.config.pad_length;
    let mut deep = empty_entry(net.count_params());
    for _ in 0..samples {
        let mut draws = 0;
        let input = loop {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(too_many_draws("DEEPREFLECS"));
            }
            let m = rng.gen_range(1..=20);
            let mut features = Matrix::zeros(pad, N_FEATURES);
            features.data_mut()[..m * N_FEATURES]
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-2.0..2.0));
            let input = PaddedInput {
                features,
                mask: Mask::prefix(pad, m),
                m_real: m,
                dropped: 0,
            };
            if input_margin(&net, &input)? > REFLECTNET_MARGIN {
                break input;
            }
        };
        deep.redraws += draws - 1;
        let label = rng.gen_range(0..net.config.n_classes);
        fold(&mut deep, gradcheck(&net, &input, label, h)?);
    }

    let mut grid_net = GridCnn::<f64>::new(GridCnnConfig::default(), seed_value);
    for c in grid_net.conv.iter_mut() {
        c.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    for f in grid_net.fc.iter_mut() {
        f.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    let mut grid = empty_entry(grid_net.count_params());
    while grid.samples < samples {
        if grid.redraws > MAX_DRAWS {
            return Err(too_many_draws("GRIDCNN"));
        }
        let cells: Vec<f64> = (0..GRID_CHANNELS * GRID_CELLS)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        if grid_margin(&grid_net, &cells)? <= GRIDCNN_MARGIN {
            grid.redraws += 1;
            continue;
        }
        let label = rng.gen_range(0..4);
        let check = grid_gradcheck(&grid_net, &cells, label, h, None)?;
        if check.kinks > 0 {
            grid.redraws += 1;
            continue;
        }
        fold(&mut grid, check.report);
    }

    Ok(FidelityReport {
        h,
        seed: seed_value,
        deepreflecs: deep,
        gridcnn: grid,
    })
}
