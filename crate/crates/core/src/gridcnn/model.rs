//! ```text
//! (2, 11, 11) -> conv3x3 16 + ReLU -> conv3x3 32 + ReLU -> conv3x3 64 + ReLU
//!             -> maxpool 2x2 -> (64, 5, 5) = 1600
//!             -> dense 128 + ReLU + dropout -> dense 32 + ReLU + dropout
//!             -> dense 4 -> softmax
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GridNorm, GRID_CELLS, GRID_CHANNELS, GRID_SIZE};
use crate::error::TrainError;
use crate::nn::{
    check_dim, cross_entropy, cross_entropy_logit_grad, dense, dense_backward, ClassDistribution, LinearParams,
    NnError, Optimizer, Scalar,
};
use crate::seed;

pub const POOLED_SIZE: usize = GRID_SIZE / 2;
pub const FLATTEN_LEN: usize = 64 * POOLED_SIZE * POOLED_SIZE;
const CONV_CHANNELS: [usize; 4] = [GRID_CHANNELS, 16, 32, 64];
const DENSE_WIDTHS: [usize; 3] = [128, 32, 4];
const K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridCnnConfig {
    /// Drop probability on both hidden dense layers, training only.
    pub dropout: f64,
}

impl Default for GridCnnConfig {
    fn default() -> Self {
        Self { dropout: 0.5 }
    }
}

/// 3x3 kernels `weights[((o * in + c) * 3 + di) * 3 + dj]` and one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![T::zero(); out_channels * in_channels * K * K],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Uniform in `±sqrt(6 / (9 in + 9 out))`, zero bias.
    pub fn glorot_uniform<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let limit = (6.0 / ((in_channels + out_channels) * K * K) as f64).sqrt();
        let mut p = Self::zeros(in_channels, out_channels);
        p.weights
            .iter_mut()
            .for_each(|w| *w = T::from_f64_lossy(rng.gen_range(-limit..limit)));
        p
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> Conv2dParams<U> {
        let cast = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        Conv2dParams {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            weights: cast(&self.weights),
            bias: cast(&self.bias),
        }
    }

    #[inline]
    pub(crate) fn w(&self, o: usize, c: usize, di: usize, dj: usize) -> T {
        self.weights[((o * self.in_channels + c) * K + di) * K + dj]
    }
}

/// Output positions `lo..hi` whose input `pos + d - 1` lies inside the grid.
#[inline]
pub(crate) fn shift_range(d: usize) -> (usize, usize) {
    (1usize.saturating_sub(d), (GRID_SIZE + 1 - d).min(GRID_SIZE))
}

/// Adds `w * input_plane` shifted by `(di - 1, dj - 1)` into `out_plane`.
#[inline]
pub(crate) fn accumulate_shifted<T: Scalar>(out_plane: &mut [T], in_plane: &[T], w: T, di: usize, dj: usize) {
    let (i_lo, i_hi) = shift_range(di);
    let (j_lo, j_hi) = shift_range(dj);
    for i in i_lo..i_hi {
        let src = (i + di - 1) * GRID_SIZE + j_lo + dj - 1;
        let dst = i * GRID_SIZE + j_lo;
        let n = j_hi - j_lo;
        for (o, &x) in out_plane[dst..dst + n].iter_mut().zip(&in_plane[src..src + n]) {
            *o = *o + w * x;
        }
    }
}

/// Rows `c * 9 + di * 3 + dj`, each the input plane `c` shifted by
/// `(di - 1, dj - 1)` with zero fill.
fn im2col<T: Scalar>(input: &[T], channels: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); channels * K * K * GRID_CELLS];
    for (c, in_plane) in input.chunks_exact(GRID_CELLS).enumerate().take(channels) {
        for di in 0..K {
            for dj in 0..K {
                let row = &mut cols[((c * K + di) * K + dj) * GRID_CELLS..][..GRID_CELLS];
                accumulate_shifted(row, in_plane, T::one(), di, dj);
            }
        }
    }
    cols
}

/// Same-padded 3x3 convolution on channel-major `(C, 11, 11)` tensors.
pub fn conv2d_same<T: Scalar>(input: &[T], params: &Conv2dParams<T>) -> Result<Vec<T>, NnError> {
    check_dim("conv2d_same", params.in_channels * GRID_CELLS, input.len())?;
    let cols = im2col(input, params.in_channels);
    let taps = params.in_channels * K * K;
    let mut out = vec![T::zero(); params.out_channels * GRID_CELLS];
    for (o, plane) in out.chunks_exact_mut(GRID_CELLS).enumerate() {
        plane.iter_mut().for_each(|v| *v = params.bias[o]);
        for (&w, col) in params.weights[o * taps..(o + 1) * taps]
            .iter()
            .zip(cols.chunks_exact(GRID_CELLS))
        {
            if w == T::zero() {
                continue;
            }
            for (v, &x) in plane.iter_mut().zip(col) {
                *v = *v + w * x;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_params)`; `grad_input` is skipped (empty) when
/// `need_input_grad` is false.
pub fn conv2d_same_backward<T: Scalar>(
    input: &[T],
    params: &Conv2dParams<T>,
    grad_out: &[T],
    need_input_grad: bool,
) -> Result<(Vec<T>, Conv2dParams<T>), NnError> {
    check_dim("conv2d_same_backward", params.in_channels * GRID_CELLS, input.len())?;
    check_dim(
        "conv2d_same_backward grad",
        params.out_channels * GRID_CELLS,
        grad_out.len(),
    )?;
    let cols = im2col(input, params.in_channels);
    let taps = params.in_channels * K * K;
    let mut grads = Conv2dParams::zeros(params.in_channels, params.out_channels);
    let mut grad_cols = if need_input_grad {
        vec![T::zero(); cols.len()]
    } else {
        Vec::new()
    };
    for (o, g_plane) in grad_out.chunks_exact(GRID_CELLS).enumerate() {
        grads.bias[o] = g_plane.iter().copied().sum();
        if g_plane.iter().all(|&g| g == T::zero()) {
            continue;
        }
        let gw = &mut grads.weights[o * taps..(o + 1) * taps];
        for (slot, col) in gw.iter_mut().zip(cols.chunks_exact(GRID_CELLS)) {
            *slot = g_plane.iter().zip(col).map(|(&g, &x)| g * x).sum();
        }
        if need_input_grad {
            let w_row = &params.weights[o * taps..(o + 1) * taps];
            for (&w, gc) in w_row.iter().zip(grad_cols.chunks_exact_mut(GRID_CELLS)) {
                for (v, &g) in gc.iter_mut().zip(g_plane) {
                    *v = *v + w * g;
                }
            }
        }
    }
    let mut grad_in = Vec::new();
    if need_input_grad {
        grad_in = vec![T::zero(); input.len()];
        for c in 0..params.in_channels {
            let gi_plane = &mut grad_in[c * GRID_CELLS..(c + 1) * GRID_CELLS];
            for di in 0..K {
                let (i_lo, i_hi) = shift_range(di);
                for dj in 0..K {
                    let (j_lo, j_hi) = shift_range(dj);
                    let n = j_hi - j_lo;
                    let gc = &grad_cols[((c * K + di) * K + dj) * GRID_CELLS..][..GRID_CELLS];
                    for i in i_lo..i_hi {
                        let src = (i + di - 1) * GRID_SIZE + j_lo + dj - 1;
                        let dst = i * GRID_SIZE + j_lo;
                        for (v, &g) in gi_plane[src..src + n].iter_mut().zip(&gc[dst..dst + n]) {
                            *v = *v + g;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grads))
}

/// 2x2 stride-2 max pool (floor) on `(C, 11, 11)`; returns `(values, winners)`
/// with winners as flat input indices. Ties go to the first cell in row-major
/// order.
pub fn max_pool_2x2<T: Scalar>(input: &[T], channels: usize) -> (Vec<T>, Vec<usize>) {
    let per = POOLED_SIZE * POOLED_SIZE;
    let mut values = Vec::with_capacity(channels * per);
    let mut winners = Vec::with_capacity(channels * per);
    for c in 0..channels {
        for i in 0..POOLED_SIZE {
            for j in 0..POOLED_SIZE {
                let mut best = c * GRID_CELLS + 2 * i * GRID_SIZE + 2 * j;
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = c * GRID_CELLS + (2 * i + a) * GRID_SIZE + 2 * j + b;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                values.push(input[best]);
                winners.push(best);
            }
        }
    }
    (values, winners)
}

fn relu_vec<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

fn relu_grad_in_place<T: Scalar>(pre: &[T], grad: &mut [T]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCnn<T = f32> {
    pub config: GridCnnConfig,
    pub conv: [Conv2dParams<T>; 3],
    pub fc: [LinearParams<T>; 3],
    pub grid_norm: GridNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCnnGrads<T> {
    pub conv: [Conv2dParams<T>; 3],
    pub fc: [LinearParams<T>; 3],
}

impl<T: Scalar> GridCnnGrads<T> {
    pub fn zeros() -> Self {
        Self {
            conv: std::array::from_fn(|l| Conv2dParams::zeros(CONV_CHANNELS[l], CONV_CHANNELS[l + 1])),
            fc: std::array::from_fn(|l| {
                let fan_in = if l == 0 { FLATTEN_LEN } else { DENSE_WIDTHS[l - 1] };
                LinearParams::zeros(fan_in, DENSE_WIDTHS[l])
            }),
        }
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(12);
        for c in &self.conv {
            out.push(&c.weights);
            out.push(&c.bias);
        }
        for f in &self.fc {
            out.push(f.weights.data());
            out.push(&f.bias);
        }
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.conv.iter_mut().zip(&other.conv) {
            for (x, y) in a
                .weights
                .iter_mut()
                .zip(&b.weights)
                .chain(a.bias.iter_mut().zip(&b.bias))
            {
                *x = *x + *y * scale;
            }
        }
        for (a, b) in self.fc.iter_mut().zip(&other.fc) {
            a.add_scaled(b, scale);
        }
    }
}

/// Intermediate values of one forward pass. `keep` holds the dropout
/// multipliers of the two hidden dense layers (all ones at inference).
#[derive(Debug, Clone)]
pub struct GridTrace<T> {
    pub input: Vec<T>,
    pub z: [Vec<T>; 3],
    pub a: [Vec<T>; 3],
    pub pooled: Vec<T>,
    pub winners: Vec<usize>,
    pub h_pre: [Vec<T>; 2],
    pub h: [Vec<T>; 2],
    pub keep: [Vec<T>; 2],
    pub logits: Vec<T>,
}

impl<T: Scalar> GridCnn<T> {
    pub fn new(config: GridCnnConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::label("gridcnn")]);
        let conv =
            std::array::from_fn(|l| Conv2dParams::glorot_uniform(CONV_CHANNELS[l], CONV_CHANNELS[l + 1], &mut rng));
        let fc = std::array::from_fn(|l| {
            let fan_in = if l == 0 { FLATTEN_LEN } else { DENSE_WIDTHS[l - 1] };
            LinearParams::glorot_uniform(fan_in, DENSE_WIDTHS[l], &mut rng)
        });
        Self {
            config,
            conv,
            fc,
            grid_norm: GridNorm::identity(),
        }
    }

    pub fn zeros(config: GridCnnConfig) -> Self {
        let GridCnnGrads { conv, fc } = GridCnnGrads::zeros();
        Self {
            config,
            conv,
            fc,
            grid_norm: GridNorm::identity(),
        }
    }

    pub fn count_params(&self) -> usize {
        self.conv.iter().map(Conv2dParams::num_params).sum::<usize>()
            + self.fc.iter().map(LinearParams::num_params).sum::<usize>()
    }

    pub fn cast<U: Scalar>(&self) -> GridCnn<U> {
        GridCnn {
            config: self.config,
            conv: std::array::from_fn(|l| self.conv[l].cast()),
            fc: std::array::from_fn(|l| self.fc[l].cast()),
            grid_norm: self.grid_norm.clone(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(12);
        for c in self.conv.iter_mut() {
            out.push(&mut c.weights);
            out.push(&mut c.bias);
        }
        for f in self.fc.iter_mut() {
            out.push(f.weights.data_mut());
            out.push(&mut f.bias);
        }
        out
    }

    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.count_params());
        for c in &self.conv {
            out.extend_from_slice(&c.weights);
            out.extend_from_slice(&c.bias);
        }
        for f in &self.fc {
            out.extend_from_slice(f.weights.data());
            out.extend_from_slice(&f.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.count_params(), "flat parameter length");
        let mut offset = 0;
        for tensor in self.tensors_mut() {
            tensor.copy_from_slice(&flat[offset..offset + tensor.len()]);
            offset += tensor.len();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.conv
            .iter()
            .all(|c| c.weights.iter().chain(&c.bias).all(|v| v.is_finite()))
            && self.fc.iter().all(LinearParams::is_finite)
    }

    /// Forward pass. With `dropout_rng` set, hidden dense units are dropped
    /// with probability `config.dropout` and the survivors scaled up.
    pub fn trace<R: Rng>(&self, grid: &[T], dropout_rng: Option<&mut R>) -> Result<GridTrace<T>, NnError> {
        let z0 = conv2d_same(grid, &self.conv[0])?;
        let a0 = relu_vec(&z0);
        let z1 = conv2d_same(&a0, &self.conv[1])?;
        let a1 = relu_vec(&z1);
        let z2 = conv2d_same(&a1, &self.conv[2])?;
        let a2 = relu_vec(&z2);
        let (pooled, winners) = max_pool_2x2(&a2, CONV_CHANNELS[3]);

        let p = self.config.dropout;
        let mut rng = dropout_rng;
        let mut keep_mask = |n: usize| -> Vec<T> {
            match rng.as_deref_mut() {
                Some(r) if p > 0.0 => (0..n)
                    .map(|_| {
                        if r.gen::<f64>() < p {
                            T::zero()
                        } else {
                            T::from_f64_lossy(1.0 / (1.0 - p))
                        }
                    })
                    .collect(),
                _ => vec![T::one(); n],
            }
        };
        let h0_pre = dense(&pooled, &self.fc[0])?;
        let keep0 = keep_mask(h0_pre.len());
        let h0: Vec<T> = relu_vec(&h0_pre).iter().zip(&keep0).map(|(&v, &k)| v * k).collect();
        let h1_pre = dense(&h0, &self.fc[1])?;
        let keep1 = keep_mask(h1_pre.len());
        let h1: Vec<T> = relu_vec(&h1_pre).iter().zip(&keep1).map(|(&v, &k)| v * k).collect();
        let logits = dense(&h1, &self.fc[2])?;
        Ok(GridTrace {
            input: grid.to_vec(),
            z: [z0, z1, z2],
            a: [a0, a1, a2],
            pooled,
            winners,
            h_pre: [h0_pre, h1_pre],
            h: [h0, h1],
            keep: [keep0, keep1],
            logits,
        })
    }

    /// Inference; dropout is off.
    pub fn forward(&self, grid: &[T]) -> Result<ClassDistribution, NnError> {
        Ok(ClassDistribution::from_logits(
            &self.trace::<rand_chacha::ChaCha8Rng>(grid, None)?.logits,
        ))
    }

    pub fn backward(&self, trace: &GridTrace<T>, label: usize) -> Result<GridCnnGrads<T>, NnError> {
        let probs = ClassDistribution::from_logits(&trace.logits).probabilities;
        let grad_logits: Vec<T> = cross_entropy_logit_grad(&probs, label)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect();
        let (mut g_h1, fc2) = dense_backward(&trace.h[1], &self.fc[2], &grad_logits)?;
        g_h1.iter_mut().zip(&trace.keep[1]).for_each(|(g, &k)| *g = *g * k);
        relu_grad_in_place(&trace.h_pre[1], &mut g_h1);
        let (mut g_h0, fc1) = dense_backward(&trace.h[0], &self.fc[1], &g_h1)?;
        g_h0.iter_mut().zip(&trace.keep[0]).for_each(|(g, &k)| *g = *g * k);
        relu_grad_in_place(&trace.h_pre[0], &mut g_h0);
        let (g_pooled, fc0) = dense_backward(&trace.pooled, &self.fc[0], &g_h0)?;

        let mut g_a = vec![T::zero(); trace.a[2].len()];
        for (&w, &g) in trace.winners.iter().zip(&g_pooled) {
            g_a[w] = g_a[w] + g;
        }
        let mut conv_grads: Vec<Conv2dParams<T>> = Vec::with_capacity(3);
        for l in (0..3).rev() {
            relu_grad_in_place(&trace.z[l], &mut g_a);
            let input = if l == 0 { &trace.input } else { &trace.a[l - 1] };
            let (g_in, grads) = conv2d_same_backward(input, &self.conv[l], &g_a, l > 0)?;
            conv_grads.push(grads);
            g_a = g_in;
        }
        conv_grads.reverse();
        let conv: [Conv2dParams<T>; 3] = conv_grads.try_into().expect("three conv layers");
        Ok(GridCnnGrads {
            conv,
            fc: [fc0, fc1, fc2],
        })
    }

    /// Loss and gradients of one sample without dropout.
    pub fn loss_and_grads(&self, grid: &[T], label: usize) -> Result<(f64, GridCnnGrads<T>), NnError> {
        let trace = self.trace::<rand_chacha::ChaCha8Rng>(grid, None)?;
        let probs = ClassDistribution::from_logits(&trace.logits).probabilities;
        Ok((cross_entropy(&probs, label), self.backward(&trace, label)?))
    }

    /// One optimizer step on the mean loss of `batch`, with dropout drawn
    /// from `rng`. Returns the loss before the step.
    pub fn train_step<R: Rng>(
        &mut self,
        batch: &[(&Vec<T>, usize)],
        lr: f64,
        optimizer: &mut Optimizer<T>,
        rng: &mut R,
    ) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let scale = T::from_f64_lossy(1.0 / batch.len() as f64);
        let mut total = GridCnnGrads::zeros();
        let mut loss = 0.0;
        for (grid, label) in batch {
            let trace = self.trace(grid, Some(&mut *rng))?;
            let probs = ClassDistribution::from_logits(&trace.logits).probabilities;
            loss += cross_entropy(&probs, *label);
            total.add_scaled(&self.backward(&trace, *label)?, scale);
        }
        loss /= batch.len() as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: 0, step: 0 });
        }
        let grads = total.tensors();
        optimizer.step(&mut self.tensors_mut(), &grads, T::from_f64_lossy(lr))?;
        Ok(loss)
    }
}

impl crate::trainer::Classifier for GridCnn<f32> {
    type Input = Vec<f32>;

    fn classify(&self, input: &Vec<f32>) -> Result<ClassDistribution, NnError> {
        self.forward(input)
    }
}

impl crate::trainer::Trainable for GridCnn<f32> {
    fn train_batch(
        &mut self,
        batch: &[(&Vec<f32>, usize)],
        lr: f64,
        optimizer: &mut Optimizer<f32>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<f64, TrainError> {
        self.train_step(batch, lr, optimizer, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerKind;

    #[test]
    fn parameter_count_oracle() {
        // conv 3*3*2*16+16, 3*3*16*32+32, 3*3*32*64+64; dense 1600*128+128,
        // 128*32+32, 32*4+4.
        let model = GridCnn::<f32>::new(GridCnnConfig::default(), 0);
        assert_eq!(model.conv[0].num_params(), 304);
        assert_eq!(model.conv[1].num_params(), 4640);
        assert_eq!(model.conv[2].num_params(), 18496);
        assert_eq!(FLATTEN_LEN, 1600);
        assert_eq!(model.fc[0].num_params(), 1600 * 128 + 128);
        assert_eq!(model.count_params(), 304 + 4640 + 18496 + 204_928 + 4128 + 132);
        assert_eq!(model.count_params(), 232_628);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut p = Conv2dParams::<f64>::zeros(1, 1);
        p.weights[4] = 1.0;
        let input: Vec<f64> = (0..GRID_CELLS).map(|i| i as f64).collect();
        assert_eq!(conv2d_same(&input, &p).unwrap(), input);
    }

    #[test]
    fn conv_same_padding_sums_neighbourhood() {
        let mut p = Conv2dParams::<f64>::zeros(1, 1);
        p.weights.iter_mut().for_each(|w| *w = 1.0);
        p.bias[0] = 0.5;
        let out = conv2d_same(&vec![1.0; GRID_CELLS], &p).unwrap();
        assert_eq!(out[0], 4.5); // corner: 2x2 neighbourhood
        assert_eq!(out[5], 6.5); // edge: 2x3
        assert_eq!(out[5 * GRID_SIZE + 5], 9.5);
    }

    #[test]
    fn conv_kernel_orientation() {
        // A weight at (di, dj) = (0, 2) reads input (i - 1, j + 1).
        let mut p = Conv2dParams::<f64>::zeros(1, 1);
        p.weights[2] = 1.0;
        let mut input = vec![0.0; GRID_CELLS];
        input[3 * GRID_SIZE + 7] = 1.0;
        let out = conv2d_same(&input, &p).unwrap();
        assert_eq!(out[4 * GRID_SIZE + 6], 1.0);
        assert_eq!(out.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn pool_picks_window_max_and_drops_last_row() {
        let mut input = vec![0.0f64; GRID_CELLS];
        input[GRID_SIZE + 1] = 3.0;
        input[10 * GRID_SIZE] = 9.0; // row 10 is outside every window
        let (values, winners) = max_pool_2x2(&input, 1);
        assert_eq!(values.len(), 25);
        assert_eq!(values[0], 3.0);
        assert_eq!(winners[0], GRID_SIZE + 1);
        assert!(values.iter().all(|&v| v != 9.0));
        let (_, tie) = max_pool_2x2(&vec![1.0f64; GRID_CELLS], 1);
        assert_eq!(tie[0], 0);
    }

    #[test]
    fn zero_model_zero_grid_is_uniform() {
        let model = GridCnn::<f32>::zeros(GridCnnConfig::default());
        let out = model.forward(&vec![0.0; GRID_CHANNELS * GRID_CELLS]).unwrap();
        assert_eq!(out.probabilities, vec![0.25; 4]);
    }

    #[test]
    fn inference_is_repeatable() {
        let model = GridCnn::<f32>::new(GridCnnConfig::default(), 1);
        let mut rng = seed::rng(2, &[]);
        let grid: Vec<f32> = (0..GRID_CHANNELS * GRID_CELLS)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let a = model.forward(&grid).unwrap();
        let b = model.forward(&grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_only_during_training() {
        let model = GridCnn::<f64>::new(GridCnnConfig::default(), 1);
        let mut rng = seed::rng(3, &[]);
        let grid: Vec<f64> = (0..GRID_CHANNELS * GRID_CELLS)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let train = model.trace(&grid, Some(&mut rng)).unwrap();
        assert!(train.keep[0].contains(&0.0));
        assert!(train.keep[0].iter().all(|&k| k == 0.0 || k == 2.0));
        let infer = model.trace::<rand_chacha::ChaCha8Rng>(&grid, None).unwrap();
        assert!(infer.keep.iter().flatten().all(|&k| k == 1.0));
    }

    #[test]
    fn lr_zero_keeps_parameters() {
        let mut model = GridCnn::<f32>::new(GridCnnConfig::default(), 4);
        let before = model.clone();
        let grid = vec![0.5f32; GRID_CHANNELS * GRID_CELLS];
        let mut rng = seed::rng(0, &[]);
        model
            .train_step(&[(&grid, 1)], 0.0, &mut Optimizer::new(OptimizerKind::Sgd), &mut rng)
            .unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn flat_params_round_trip() {
        let model = GridCnn::<f32>::new(GridCnnConfig::default(), 5);
        let mut other = GridCnn::<f32>::zeros(GridCnnConfig::default());
        other.set_flat_params(&model.flat_params());
        assert_eq!(other.conv, model.conv);
        assert_eq!(other.fc, model.fc);
    }
}
