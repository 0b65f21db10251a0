//! Central differences over every GRIDCNN parameter.
//!
//! A full forward pass per perturbed parameter is far too slow at 232k
//! parameters, so each perturbed loss is computed by pushing only the change
//! through the network: one conv plane or one dense unit is touched by the
//! perturbation, and downstream layers only see the planes and units that
//! actually moved. ReLU and pooling are evaluated exactly on `base + delta`,
//! so the result is `L(theta +- h) - L(theta)` itself, not a linearization.

use rand_chacha::ChaCha8Rng;

use super::model::{accumulate_shifted, GridCnn, GridTrace, POOLED_SIZE};
use super::{GRID_CELLS, GRID_SIZE};
use crate::nn::{ClassDistribution, GradCheckReport, NnError};

#[derive(Debug, Clone, PartialEq)]
pub struct GridGradCheck {
    pub report: GradCheckReport,
    /// Perturbations that moved a ReLU across zero or changed a pooling
    /// winner. Differences across such kinks do not measure the gradient.
    pub kinks: usize,
    /// Smallest |pre-activation| or pooling gap of the unperturbed pass.
    pub margin: f64,
}

struct Planes {
    data: Vec<f64>,
    active: Vec<bool>,
}

impl Planes {
    fn new(channels: usize) -> Self {
        Self {
            data: vec![0.0; channels * GRID_CELLS],
            active: vec![false; channels],
        }
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        self.active[c] = true;
        &mut self.data[c * GRID_CELLS..(c + 1) * GRID_CELLS]
    }
}

struct Propagator<'a> {
    model: &'a GridCnn<f64>,
    trace: GridTrace<f64>,
    probs: Vec<f64>,
    label: usize,
    kinks: usize,
}

impl Propagator<'_> {
    /// `relu(z + d) - relu(z)` without rounding when no kink is crossed.
    fn relu_delta(&mut self, z: f64, d: f64) -> f64 {
        if d == 0.0 {
            return 0.0;
        }
        let after = z + d;
        match (z > 0.0, after > 0.0) {
            (true, true) => d,
            (false, false) => 0.0,
            _ => {
                self.kinks += 1;
                after.max(0.0) - z.max(0.0)
            }
        }
    }

    /// `L(logits + d) - L(logits)` for cross-entropy, without cancellation.
    fn loss_delta(&self, d: &[f64]) -> f64 {
        let s: f64 = self.probs.iter().zip(d).map(|(p, dz)| p * dz.exp_m1()).sum();
        s.ln_1p() - d[self.label]
    }

    fn through_h1(&mut self, dh1: &[f64]) -> Vec<f64> {
        let fc = &self.model.fc[2];
        let mut out = vec![0.0; fc.out_features()];
        for (k, &d) in dh1.iter().enumerate() {
            if d != 0.0 {
                out.iter_mut().zip(fc.weights.row(k)).for_each(|(o, &w)| *o += d * w);
            }
        }
        out
    }

    fn through_h1_pre(&mut self, dpre: &[f64]) -> Vec<f64> {
        let dh1: Vec<f64> = (0..dpre.len())
            .map(|m| self.relu_delta(self.trace.h_pre[1][m], dpre[m]))
            .collect();
        self.through_h1(&dh1)
    }

    fn through_h0(&mut self, dh0: &[f64]) -> Vec<f64> {
        let fc = &self.model.fc[1];
        let mut dpre = vec![0.0; fc.out_features()];
        for (k, &d) in dh0.iter().enumerate() {
            if d != 0.0 {
                dpre.iter_mut().zip(fc.weights.row(k)).for_each(|(o, &w)| *o += d * w);
            }
        }
        self.through_h1_pre(&dpre)
    }

    fn through_h0_pre(&mut self, dpre: &[f64]) -> Vec<f64> {
        let dh0: Vec<f64> = (0..dpre.len())
            .map(|m| self.relu_delta(self.trace.h_pre[0][m], dpre[m]))
            .collect();
        self.through_h0(&dh0)
    }

    fn through_pooled(&mut self, dpooled: &[f64]) -> Vec<f64> {
        let fc = &self.model.fc[0];
        let mut dpre = vec![0.0; fc.out_features()];
        for (k, &d) in dpooled.iter().enumerate() {
            if d != 0.0 {
                dpre.iter_mut().zip(fc.weights.row(k)).for_each(|(o, &w)| *o += d * w);
            }
        }
        self.through_h0_pre(&dpre)
    }

    fn through_a2(&mut self, da2: &Planes) -> Vec<f64> {
        let per = POOLED_SIZE * POOLED_SIZE;
        let mut dpooled = vec![0.0; self.trace.pooled.len()];
        let a2 = &self.trace.a[2];
        for c in (0..da2.active.len()).filter(|&c| da2.active[c]) {
            for i in 0..POOLED_SIZE {
                for j in 0..POOLED_SIZE {
                    let cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .map(|(a, b)| c * GRID_CELLS + (2 * i + a) * GRID_SIZE + 2 * j + b);
                    if cells.iter().all(|&x| da2.data[x] == 0.0) {
                        continue;
                    }
                    let mut winner = cells[0];
                    for &x in &cells[1..] {
                        if a2[x] + da2.data[x] > a2[winner] + da2.data[winner] {
                            winner = x;
                        }
                    }
                    let k = c * per + i * POOLED_SIZE + j;
                    let old = self.trace.winners[k];
                    dpooled[k] = if winner == old {
                        da2.data[winner]
                    } else {
                        self.kinks += 1;
                        (a2[winner] + da2.data[winner]) - a2[old]
                    };
                }
            }
        }
        self.through_pooled(&dpooled)
    }

    /// Applies ReLU deltas to the active planes of a pre-activation delta.
    fn relu_planes(&mut self, layer: usize, dz: &Planes) -> Planes {
        let mut da = Planes::new(dz.active.len());
        for c in (0..dz.active.len()).filter(|&c| dz.active[c]) {
            let base = c * GRID_CELLS;
            let mut any = false;
            for x in base..base + GRID_CELLS {
                let d = self.relu_delta(self.trace.z[layer][x], dz.data[x]);
                da.data[x] = d;
                any |= d != 0.0;
            }
            da.active[c] = any;
        }
        da
    }

    /// Pre-activation delta of conv layer `layer` from a delta of its input.
    fn conv_delta(&self, layer: usize, d_in: &Planes) -> Planes {
        let conv = &self.model.conv[layer];
        let active: Vec<usize> = (0..conv.in_channels).filter(|&c| d_in.active[c]).collect();
        // Shifted copies of the active input planes, one row per tap.
        let mut cols = vec![0.0; active.len() * 9 * GRID_CELLS];
        for (a, &c) in active.iter().enumerate() {
            let in_plane = &d_in.data[c * GRID_CELLS..(c + 1) * GRID_CELLS];
            for tap in 0..9 {
                let row = &mut cols[(a * 9 + tap) * GRID_CELLS..][..GRID_CELLS];
                accumulate_shifted(row, in_plane, 1.0, tap / 3, tap % 3);
            }
        }
        let mut dz = Planes::new(conv.out_channels);
        if active.is_empty() {
            return dz;
        }
        for o in 0..conv.out_channels {
            let out_plane = dz.plane_mut(o);
            for (a, &c) in active.iter().enumerate() {
                for tap in 0..9 {
                    let w = conv.w(o, c, tap / 3, tap % 3);
                    let col = &cols[(a * 9 + tap) * GRID_CELLS..][..GRID_CELLS];
                    out_plane.iter_mut().zip(col).for_each(|(v, &x)| *v += w * x);
                }
            }
        }
        dz
    }

    fn through_z(&mut self, layer: usize, dz: &Planes) -> Vec<f64> {
        let da = self.relu_planes(layer, dz);
        if layer == 2 {
            self.through_a2(&da)
        } else {
            let next = self.conv_delta(layer + 1, &da);
            self.through_z(layer + 1, &next)
        }
    }

    fn conv_input(&self, layer: usize) -> &[f64] {
        if layer == 0 {
            &self.trace.input
        } else {
            &self.trace.a[layer - 1]
        }
    }

    fn conv_weight_delta(&mut self, layer: usize, index: usize, d: f64) -> Vec<f64> {
        let conv = &self.model.conv[layer];
        let (o, rest) = (index / (conv.in_channels * 9), index % (conv.in_channels * 9));
        let (c, di, dj) = (rest / 9, (rest % 9) / 3, rest % 3);
        let mut dz = Planes::new(conv.out_channels);
        let in_plane = self.conv_input(layer)[c * GRID_CELLS..(c + 1) * GRID_CELLS].to_vec();
        accumulate_shifted(dz.plane_mut(o), &in_plane, d, di, dj);
        self.through_z(layer, &dz)
    }

    fn conv_bias_delta(&mut self, layer: usize, o: usize, d: f64) -> Vec<f64> {
        let mut dz = Planes::new(self.model.conv[layer].out_channels);
        dz.plane_mut(o).iter_mut().for_each(|v| *v = d);
        self.through_z(layer, &dz)
    }

    fn dense_delta(&mut self, layer: usize, weight: Option<usize>, out: usize, d: f64) -> Vec<f64> {
        let input: &[f64] = match layer {
            0 => &self.trace.pooled,
            l => &self.trace.h[l - 1],
        };
        let dv = match weight {
            Some(k) => d * input[k],
            None => d,
        };
        let mut dpre = vec![0.0; self.model.fc[layer].out_features()];
        dpre[out] = dv;
        match layer {
            0 => self.through_h0_pre(&dpre),
            1 => self.through_h1_pre(&dpre),
            _ => dpre,
        }
    }

    /// Logit change for perturbing flat parameter `p` by `d`.
    fn delta_for(&mut self, p: usize, d: f64) -> Vec<f64> {
        let mut offset = 0;
        for layer in 0..3 {
            let conv = &self.model.conv[layer];
            let (nw, nb) = (conv.weights.len(), conv.bias.len());
            if p < offset + nw {
                return self.conv_weight_delta(layer, p - offset, d);
            }
            offset += nw;
            if p < offset + nb {
                return self.conv_bias_delta(layer, p - offset, d);
            }
            offset += nb;
        }
        for layer in 0..3 {
            let fc = &self.model.fc[layer];
            let (nw, nb, out) = (fc.weights.data().len(), fc.bias.len(), fc.out_features());
            if p < offset + nw {
                let i = p - offset;
                return self.dense_delta(layer, Some(i / out), i % out, d);
            }
            offset += nw;
            if p < offset + nb {
                return self.dense_delta(layer, None, p - offset, d);
            }
            offset += nb;
        }
        panic!("parameter index {p} out of range");
    }

    fn numeric(&mut self, p: usize, h: f64) -> f64 {
        let plus = self.delta_for(p, h);
        let minus = self.delta_for(p, -h);
        (self.loss_delta(&plus) - self.loss_delta(&minus)) / (2.0 * h)
    }
}

fn margin_of(trace: &GridTrace<f64>) -> f64 {
    let mut margin = trace
        .z
        .iter()
        .flatten()
        .chain(trace.h_pre.iter().flatten())
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    for (k, &w) in trace.winners.iter().enumerate() {
        let top = trace.pooled[k];
        if top <= 0.0 {
            continue;
        }
        let (c, r) = (k / (POOLED_SIZE * POOLED_SIZE), k % (POOLED_SIZE * POOLED_SIZE));
        let (i, j) = (r / POOLED_SIZE, r % POOLED_SIZE);
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let x = c * GRID_CELLS + (2 * i + a) * GRID_SIZE + 2 * j + b;
            if x != w {
                margin = margin.min(top - trace.a[2][x]);
            }
        }
    }
    margin
}

/// Distance of `grid` from the nearest ReLU or pooling kink under `model`.
pub fn grid_margin(model: &GridCnn<f64>, grid: &[f64]) -> Result<f64, NnError> {
    Ok(margin_of(&model.trace::<ChaCha8Rng>(grid, None)?))
}

/// Backprop against central differences for every parameter, dropout off.
/// If `params` is given only those flat indices are checked.
pub fn grid_gradcheck(
    model: &GridCnn<f64>,
    grid: &[f64],
    label: usize,
    h: f64,
    params: Option<&[usize]>,
) -> Result<GridGradCheck, NnError> {
    let trace = model.trace::<ChaCha8Rng>(grid, None)?;
    let analytic = model.backward(&trace, label)?.flatten();
    let margin = margin_of(&trace);
    let probs = ClassDistribution::from_logits(&trace.logits).probabilities;
    let mut prop = Propagator {
        model,
        trace,
        probs,
        label,
        kinks: 0,
    };
    let all: Vec<usize>;
    let indices = match params {
        Some(p) => p,
        None => {
            all = (0..analytic.len()).collect();
            &all
        }
    };
    let pairs: Vec<(f64, f64)> = indices.iter().map(|&p| (analytic[p], prop.numeric(p, h))).collect();
    let mut report = GradCheckReport::from_pairs(pairs);
    for (entry, &p) in report.per_parameter_errors.iter_mut().zip(indices) {
        entry.param = p;
    }
    Ok(GridGradCheck {
        report,
        kinks: prop.kinks,
        margin,
    })
}
