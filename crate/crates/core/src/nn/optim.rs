use serde::{Deserialize, Serialize};

use super::{NnError, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `p <- p - lr * g`
    Sgd,
    /// Adaptive moment estimation with bias correction.
    #[default]
    Adam,
}

/// Update rule plus its running state. Parameters are passed as a list of
/// tensors (flat slices); the state keeps one moment pair per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every tensor. Gradients are validated up front so
    /// a non-finite entry leaves all parameters untouched.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) -> Result<(), NnError> {
        super::check_dim("Optimizer::step", params.len(), grads.len())?;
        for (tensor, (p, g)) in params.iter().zip(grads).enumerate() {
            super::check_dim("Optimizer::step tensor", p.len(), g.len())?;
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { tensor, index });
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.iter_mut().zip(g.iter()) {
                        *pv = *pv - lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => self.adam_step(params, grads, lr),
        }
        Ok(())
    }

    fn adam_step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) {
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let b1 = T::from_f64_lossy(ADAM_BETA1);
        let b2 = T::from_f64_lossy(ADAM_BETA2);
        let eps = T::from_f64_lossy(ADAM_EPS);
        let t = self.step as i32;
        let c1 = T::one() - T::from_f64_lossy(ADAM_BETA1.powi(t));
        let c2 = T::one() - T::from_f64_lossy(ADAM_BETA2.powi(t));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(kind: OptimizerKind, p: f64, g: f64, lr: f64) -> f64 {
        let mut opt = Optimizer::new(kind);
        let mut params = [p];
        opt.step(&mut [&mut params[..]], &[&[g][..]], lr).unwrap();
        params[0]
    }

    #[test]
    fn sgd_examples() {
        assert!((one_step(OptimizerKind::Sgd, 1.0, 0.5, 0.1) - 0.95).abs() < 1e-15);
        assert_eq!(one_step(OptimizerKind::Sgd, 1.0, 0.0, 0.1), 1.0);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let (p, g, lr) = (1.0, 0.5f64, 0.1);
        // Bias correction cancels the moment decay on step one.
        let expected = p - lr * g / ((g * g).sqrt() + ADAM_EPS);
        let got = one_step(OptimizerKind::Adam, p, g, lr);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_reports_location_and_leaves_params() {
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        let mut a = [1.0f64, 2.0];
        let mut b = [3.0f64];
        let err = opt
            .step(&mut [&mut a[..], &mut b[..]], &[&[0.1, 0.2][..], &[f64::NAN][..]], 0.1)
            .unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { tensor: 1, index: 0 });
        assert_eq!(a, [1.0, 2.0]);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut opt = Optimizer::new(OptimizerKind::Adam);
            let mut p = [0.3f32, -0.7, 1.1];
            for k in 0..5 {
                let g = [0.1 * k as f32, -0.2, 0.05];
                opt.step(&mut [&mut p[..]], &[&g[..]], 0.01).unwrap();
            }
            p
        };
        assert_eq!(run().map(f32::to_bits), run().map(f32::to_bits));
    }
}
