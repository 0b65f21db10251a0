use serde::{Deserialize, Serialize};

/// Floor in the denominator of the relative error.
pub const GRADCHECK_EPS: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, eps)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let per_parameter_errors: Vec<_> = pairs
            .into_iter()
            .enumerate()
            .map(|(param, (analytic, numeric))| GradCheckEntry {
                param,
                analytic,
                numeric,
                relative_error: relative_error(analytic, numeric),
            })
            .collect();
        let max_relative_error = per_parameter_errors
            .iter()
            .map(|e| e.relative_error)
            .fold(0.0, f64::max);
        Self {
            max_relative_error,
            per_parameter_errors,
        }
    }

    /// Folds several reports into one, keeping every entry.
    pub fn merge(reports: impl IntoIterator<Item = GradCheckReport>) -> Self {
        let mut per_parameter_errors = Vec::new();
        let mut max_relative_error = 0.0f64;
        for r in reports {
            max_relative_error = max_relative_error.max(r.max_relative_error);
            per_parameter_errors.extend(r.per_parameter_errors);
        }
        Self {
            max_relative_error,
            per_parameter_errors,
        }
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.per_parameter_errors
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// Central-difference check of `analytic` against `loss` at `params`.
///
/// `loss` must evaluate the full forward pass and loss for the flat parameter
/// vector it is given.
pub fn finite_diff_gradcheck<F>(params: &[f64], analytic: &[f64], h: f64, mut loss: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut probe = params.to_vec();
    let pairs: Vec<(f64, f64)> = (0..params.len())
        .map(|i| {
            probe[i] = params[i] + h;
            let plus = loss(&probe);
            probe[i] = params[i] - h;
            let minus = loss(&probe);
            probe[i] = params[i];
            (analytic[i], (plus - minus) / (2.0 * h))
        })
        .collect();
    GradCheckReport::from_pairs(pairs)
}
