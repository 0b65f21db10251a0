//! The reflection-list classifier.
//!
//! ```text
//! (M, N) -> conv1x1 + ReLU -> (M, w1)
//!        -> global context -> (M, 2 w1)      [optional]
//!        -> conv1x1 + ReLU -> (M, w2)
//!        -> masked global max pool -> (w2)
//!        -> dense -> softmax -> (C)
//! ```
//!
//! Every stage before the pool works row by row, and the pool only looks at
//! valid rows, so the output does not depend on row order, pad length or the
//! contents of padding rows.

mod gradcheck;
mod io;

pub use gradcheck::{gradcheck, input_margin};
pub use io::{MODEL_MAGIC, MODEL_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::nn::{
    cross_entropy, cross_entropy_logit_grad, dense, dense_backward, global_context_layer,
    global_context_layer_backward, masked_global_max_pool, max_pool_backward, relu, relu_backward,
    rowwise_linear_masked, rowwise_linear_masked_backward, ClassDistribution, GclOutput, LinearParams, Mask, Matrix,
    NnError, Optimizer, PoolOutput, Scalar,
};
use crate::preprocess::{NormStats, PaddedInput, N_FEATURES};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectNetConfig {
    pub n_features: usize,
    pub width1: usize,
    pub width2: usize,
    pub n_classes: usize,
    pub pad_length: usize,
    /// Global context layer between the two convolutions.
    pub use_gcl: bool,
}

impl Default for ReflectNetConfig {
    fn default() -> Self {
        Self {
            n_features: N_FEATURES,
            width1: 16,
            width2: 32,
            n_classes: 4,
            pad_length: 64,
            use_gcl: true,
        }
    }
}

impl ReflectNetConfig {
    pub fn without_gcl(self) -> Self {
        Self { use_gcl: false, ..self }
    }

    /// Input width of the second convolution.
    pub fn conv2_in(&self) -> usize {
        if self.use_gcl {
            2 * self.width1
        } else {
            self.width1
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("n_features", self.n_features),
            ("width1", self.width1),
            ("width2", self.width2),
            ("n_classes", self.n_classes),
            ("pad_length", self.pad_length),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("{name} must be at least 1")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectNet<T = f32> {
    pub config: ReflectNetConfig,
    pub conv1: LinearParams<T>,
    pub conv2: LinearParams<T>,
    pub head: LinearParams<T>,
    pub norm_stats: NormStats,
}

/// Gradients of the three parameterized layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectNetGrads<T> {
    pub conv1: LinearParams<T>,
    pub conv2: LinearParams<T>,
    pub head: LinearParams<T>,
}

impl<T: Scalar> ReflectNetGrads<T> {
    pub fn zeros(config: &ReflectNetConfig) -> Self {
        Self {
            conv1: LinearParams::zeros(config.n_features, config.width1),
            conv2: LinearParams::zeros(config.conv2_in(), config.width2),
            head: LinearParams::zeros(config.width2, config.n_classes),
        }
    }

    fn add_scaled(&mut self, other: &Self, scale: T) {
        self.conv1.add_scaled(&other.conv1, scale);
        self.conv2.add_scaled(&other.conv2, scale);
        self.head.add_scaled(&other.head, scale);
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [
            self.conv1.weights.data(),
            &self.conv1.bias,
            self.conv2.weights.data(),
            &self.conv2.bias,
            self.head.weights.data(),
            &self.head.bias,
        ]
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Matrix<T>,
    pub mask: Mask,
    pub z1: Matrix<T>,
    pub a1: Matrix<T>,
    pub gcl: Option<GclOutput<T>>,
    pub z2: Matrix<T>,
    pub a2: Matrix<T>,
    pub pool: PoolOutput<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn conv2_input(&self) -> &Matrix<T> {
        self.gcl.as_ref().map_or(&self.a1, |g| &g.output)
    }
}

impl<T: Scalar> ReflectNet<T> {
    /// Seeded initialization: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn new(config: ReflectNetConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::label("reflectnet")]);
        Self {
            conv1: LinearParams::glorot_uniform(config.n_features, config.width1, &mut rng),
            conv2: LinearParams::glorot_uniform(config.conv2_in(), config.width2, &mut rng),
            head: LinearParams::glorot_uniform(config.width2, config.n_classes, &mut rng),
            norm_stats: NormStats::identity(),
            config,
        }
    }

    pub fn zeros(config: ReflectNetConfig) -> Self {
        Self {
            conv1: LinearParams::zeros(config.n_features, config.width1),
            conv2: LinearParams::zeros(config.conv2_in(), config.width2),
            head: LinearParams::zeros(config.width2, config.n_classes),
            norm_stats: NormStats::identity(),
            config,
        }
    }

    /// Learnable parameters; the global context layer and pooling have none.
    pub fn count_params(&self) -> usize {
        self.conv1.num_params() + self.conv2.num_params() + self.head.num_params()
    }

    pub fn cast<U: Scalar>(&self) -> ReflectNet<U> {
        ReflectNet {
            config: self.config,
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            head: self.head.cast(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.conv1.weights.data_mut(),
            &mut self.conv1.bias,
            self.conv2.weights.data_mut(),
            &mut self.conv2.bias,
            self.head.weights.data_mut(),
            &mut self.head.bias,
        ]
    }

    pub fn flat_params(&self) -> Vec<T> {
        [
            self.conv1.weights.data(),
            &self.conv1.bias[..],
            self.conv2.weights.data(),
            &self.conv2.bias[..],
            self.head.weights.data(),
            &self.head.bias[..],
        ]
        .concat()
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
        self.conv1.is_finite() && self.conv2.is_finite() && self.head.is_finite()
    }

    /// Forward pass on an arbitrary feature matrix and mask.
    pub fn trace(&self, features: &Matrix<T>, mask: &Mask) -> Result<ForwardTrace<T>, NnError> {
        let z1 = rowwise_linear_masked(features, &self.conv1, mask)?;
        let a1 = relu(&z1);
        let gcl = if self.config.use_gcl {
            Some(global_context_layer(&a1, mask)?)
        } else {
            None
        };
        let z2 = rowwise_linear_masked(gcl.as_ref().map_or(&a1, |g| &g.output), &self.conv2, mask)?;
        let a2 = relu(&z2);
        let pool = masked_global_max_pool(&a2, mask)?;
        let logits = dense(&pool.values, &self.head)?;
        Ok(ForwardTrace {
            input: features.clone(),
            mask: mask.clone(),
            z1,
            a1,
            gcl,
            z2,
            a2,
            pool,
            logits,
        })
    }

    pub fn forward_masked(&self, features: &Matrix<T>, mask: &Mask) -> Result<ClassDistribution, NnError> {
        Ok(ClassDistribution::from_logits(&self.trace(features, mask)?.logits))
    }

    pub fn forward(&self, input: &PaddedInput<T>) -> Result<ClassDistribution, NnError> {
        self.forward_masked(&input.features, &input.mask)
    }

    /// Gradients of the cross-entropy of one traced sample.
    pub fn backward(&self, trace: &ForwardTrace<T>, label: usize) -> Result<ReflectNetGrads<T>, NnError> {
        let probs = ClassDistribution::from_logits(&trace.logits).probabilities;
        let grad_logits: Vec<T> = cross_entropy_logit_grad(&probs, label)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect();
        let (grad_pooled, head) = dense_backward(&trace.pool.values, &self.head, &grad_logits)?;
        let grad_a2 = max_pool_backward(trace.a2.rows(), &trace.pool.winners, &grad_pooled)?;
        let grad_z2 = relu_backward(&trace.z2, &grad_a2)?;
        let (grad_c2_in, conv2) =
            rowwise_linear_masked_backward(trace.conv2_input(), &self.conv2, &grad_z2, &trace.mask)?;
        let grad_a1 = match &trace.gcl {
            Some(gcl) => global_context_layer_backward(&gcl.pool, &grad_c2_in, &trace.mask)?,
            None => grad_c2_in,
        };
        let grad_z1 = relu_backward(&trace.z1, &grad_a1)?;
        let (_, conv1) = rowwise_linear_masked_backward(&trace.input, &self.conv1, &grad_z1, &trace.mask)?;
        Ok(ReflectNetGrads { conv1, conv2, head })
    }

    /// Cross-entropy of one sample and its gradients.
    pub fn loss_and_grads(&self, input: &PaddedInput<T>, label: usize) -> Result<(f64, ReflectNetGrads<T>), NnError> {
        let trace = self.trace(&input.features, &input.mask)?;
        let probs = ClassDistribution::from_logits(&trace.logits).probabilities;
        Ok((cross_entropy(&probs, label), self.backward(&trace, label)?))
    }

    /// One optimizer step on the mean cross-entropy of `batch`. Returns the
    /// loss before the step.
    pub fn train_step(
        &mut self,
        batch: &[(&PaddedInput<T>, usize)],
        lr: f64,
        optimizer: &mut Optimizer<T>,
    ) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let scale = T::from_f64_lossy(1.0 / batch.len() as f64);
        let mut total = ReflectNetGrads::zeros(&self.config);
        let mut loss = 0.0;
        for (input, label) in batch {
            let (l, g) = self.loss_and_grads(input, *label)?;
            loss += l;
            total.add_scaled(&g, scale);
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

impl crate::trainer::Classifier for ReflectNet<f32> {
    type Input = PaddedInput<f32>;

    fn classify(&self, input: &PaddedInput<f32>) -> Result<ClassDistribution, NnError> {
        self.forward(input)
    }
}

impl crate::trainer::Trainable for ReflectNet<f32> {
    fn train_batch(
        &mut self,
        batch: &[(&PaddedInput<f32>, usize)],
        lr: f64,
        optimizer: &mut Optimizer<f32>,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<f64, TrainError> {
        self.train_step(batch, lr, optimizer)
    }
}

/// Normalized, padded inputs for every sample, paired with class indices.
pub fn prepare_inputs(
    samples: &[crate::preprocess::ObjectSample],
    stats: &NormStats,
    pad_length: usize,
) -> Result<Vec<(PaddedInput<f32>, usize)>, crate::preprocess::PreprocessError> {
    samples
        .iter()
        .map(|s| {
            let rows = crate::preprocess::sample_feature_rows(s);
            Ok((
                crate::preprocess::pad_and_mask(&rows, pad_length, stats)?,
                s.class_label.index(),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::OptimizerKind;

    fn random_input(rng: &mut impl Rng, m: usize, pad: usize) -> PaddedInput<f32> {
        let mut features = Matrix::zeros(pad, N_FEATURES);
        for v in features.data_mut()[..m * N_FEATURES].iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        PaddedInput {
            features,
            mask: Mask::prefix(pad, m),
            m_real: m,
            dropped: 0,
        }
    }

    #[test]
    fn default_model_has_1284_parameters() {
        let model = ReflectNet::<f32>::new(ReflectNetConfig::default(), 0);
        assert_eq!(model.count_params(), 5 * 16 + 16 + 32 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(model.count_params(), 1284);
    }

    #[test]
    fn ablated_model_counts_only_the_narrower_conv2() {
        // conv1 5x16+16, conv2 16x32+32, head 32x4+4.
        let model = ReflectNet::<f32>::new(ReflectNetConfig::default().without_gcl(), 0);
        assert_eq!(model.count_params(), 96 + 544 + 132);
        assert_eq!(model.count_params(), 772);
    }

    #[test]
    fn small_widths_count() {
        let config = ReflectNetConfig {
            width1: 8,
            width2: 16,
            ..Default::default()
        };
        assert_eq!(
            ReflectNet::<f32>::new(config, 0).count_params(),
            5 * 8 + 8 + 16 * 16 + 16 + 16 * 4 + 4
        );
        assert_eq!(ReflectNet::<f32>::new(config, 0).count_params(), 388);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ReflectNet::<f32>::new(ReflectNetConfig::default(), 42);
        let b = ReflectNet::<f32>::new(ReflectNetConfig::default(), 42);
        let bits = |m: &ReflectNet<f32>| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&ReflectNet::new(ReflectNetConfig::default(), 43)));
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = ReflectNet::<f32>::zeros(ReflectNetConfig::default());
        let mut rng = seed::rng(1, &[]);
        let out = model.forward(&random_input(&mut rng, 7, 64)).unwrap();
        assert_eq!(out.probabilities, vec![0.25; 4]);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let model = ReflectNet::<f32>::new(ReflectNetConfig::default(), 0);
        let mut rng = seed::rng(1, &[]);
        let mut input = random_input(&mut rng, 3, 8);
        input.mask = Mask::prefix(8, 0);
        assert!(matches!(model.forward(&input), Err(NnError::EmptyPool { .. })));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut model = ReflectNet::<f32>::new(ReflectNetConfig::default(), 3);
        let before = model.clone();
        let mut rng = seed::rng(2, &[]);
        let input = random_input(&mut rng, 5, 64);
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        let loss = model.train_step(&[(&input, 1)], 0.0, &mut opt).unwrap();
        assert!(loss > 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn repeated_sample_batch_matches_single() {
        let mut rng = seed::rng(4, &[]);
        let input = random_input(&mut rng, 6, 16);
        let base = ReflectNet::<f64>::new(ReflectNetConfig::default(), 5);
        let wide = input.cast::<f64>();

        let mut single = base.clone();
        single
            .train_step(&[(&wide, 2)], 0.05, &mut Optimizer::new(OptimizerKind::Sgd))
            .unwrap();
        let mut repeated = base.clone();
        repeated
            .train_step(
                &[(&wide, 2), (&wide, 2), (&wide, 2)],
                0.05,
                &mut Optimizer::new(OptimizerKind::Sgd),
            )
            .unwrap();
        for (a, b) in single.flat_params().iter().zip(repeated.flat_params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fits_two_separable_points() {
        let mut rng = seed::rng(9, &[]);
        let a = random_input(&mut rng, 3, 8);
        let b = random_input(&mut rng, 4, 8);
        let mut model = ReflectNet::<f32>::new(ReflectNetConfig::default(), 9);
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = model.train_step(&[(&a, 0), (&b, 3)], 0.01, &mut opt).unwrap();
        }
        assert!(loss < 0.01, "loss {loss}");
    }
}
