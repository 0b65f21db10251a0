use super::Scalar;

/// Added inside the logarithm of the cross-entropy.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln(p[label] + eps)`.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> T {
    -(probs[label] + T::from_f64_lossy(CROSS_ENTROPY_EPS)).ln()
}

/// Gradient of softmax cross-entropy w.r.t. the logits: `p - onehot(label)`.
pub fn cross_entropy_logit_grad<T: Scalar>(probs: &[T], label: usize) -> Vec<T> {
    let mut grad = probs.to_vec();
    grad[label] = grad[label] - T::one();
    grad
}


/// Softmax output of a classifier with its argmax.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassDistribution {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl ClassDistribution {
    /// Softmax in double precision regardless of the logit type. Ties in the
    /// argmax go to the lowest class index.
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Self {
        let wide: Vec<f64> = logits.iter().map(|z| z.to_f64_lossy()).collect();
        let probabilities = softmax(&wide);
        let predicted = argmax(&probabilities);
        Self {
            probabilities,
            predicted,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod distribution_tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(ClassDistribution::from_logits(&[0.0f32; 4]).predicted, 0);
        assert_eq!(ClassDistribution::from_logits(&[1.0f32, 3.0, 3.0]).predicted, 1);
    }

    #[test]
    fn argmax_invariant_under_logit_shift() {
        let z = [0.3f64, -1.2, 2.5, 2.4];
        let base = ClassDistribution::from_logits(&z);
        for c in [-100.0, -1.0, 7.5, 250.0] {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            assert_eq!(ClassDistribution::from_logits(&shifted).predicted, base.predicted);
        }
    }
}
