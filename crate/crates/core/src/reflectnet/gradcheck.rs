use super::ReflectNet;
use crate::nn::{cross_entropy, finite_diff_gradcheck, GradCheckReport, Matrix, NnError};
use crate::preprocess::PaddedInput;

/// Central-difference check of every parameter of `model` on one sample.
/// Run it in double precision, on inputs whose [`input_margin`] is well
/// above `h`.
pub fn gradcheck(
    model: &ReflectNet<f64>,
    input: &PaddedInput<f64>,
    label: usize,
    h: f64,
) -> Result<GradCheckReport, NnError> {
    let (_, grads) = model.loss_and_grads(input, label)?;
    let analytic = grads.flatten();
    let params = model.flat_params();
    let mut probe = model.clone();
    let mut failure = None;
    let report = finite_diff_gradcheck(&params, &analytic, h, |p| {
        probe.set_flat_params(p);
        match probe.forward(input) {
            Ok(out) => cross_entropy(&out.probabilities, label),
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn min_abs_valid(m: &Matrix<f64>, rows: &[usize]) -> f64 {
    rows.iter()
        .flat_map(|&i| m.row(i).iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Gap between the largest and second-largest positive entries of each
/// column over `rows`.
fn min_pool_gap(m: &Matrix<f64>, rows: &[usize]) -> f64 {
    let mut gap = f64::INFINITY;
    for j in 0..m.cols() {
        let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &i in rows {
            let v = m.get(i, j);
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        if top > 0.0 && second.is_finite() {
            gap = gap.min(top - second);
        }
    }
    gap
}

/// Distance of the sample from the nearest non-differentiable point: the
/// smallest |pre-activation| and the smallest gap between pooling winner and
/// runner-up, over valid rows.
pub fn input_margin(model: &ReflectNet<f64>, input: &PaddedInput<f64>) -> Result<f64, NnError> {
    let trace = model.trace(&input.features, &input.mask)?;
    let rows: Vec<usize> = trace.mask.valid_rows().collect();
    let mut margin = min_abs_valid(&trace.z1, &rows).min(min_abs_valid(&trace.z2, &rows));
    if trace.gcl.is_some() {
        margin = margin.min(min_pool_gap(&trace.a1, &rows));
    }
    margin = margin.min(min_pool_gap(&trace.a2, &rows));
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::Mask;
    use crate::preprocess::N_FEATURES;
    use crate::reflectnet::ReflectNetConfig;
    use crate::seed;

    fn setup(config: ReflectNetConfig, m: usize, seed_value: u64) -> (ReflectNet<f64>, PaddedInput<f64>) {
        let mut rng = seed::rng(seed_value, &[]);
        loop {
            let mut model = ReflectNet::<f64>::new(config, rng.gen());
            for b in model.conv1.bias.iter_mut().chain(model.conv2.bias.iter_mut()) {
                *b = rng.gen_range(-0.3..0.3);
            }
            let mut features = Matrix::zeros(8, N_FEATURES);
            for v in features.data_mut()[..m * N_FEATURES].iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let input = PaddedInput {
                features,
                mask: Mask::prefix(8, m),
                m_real: m,
                dropped: 0,
            };
            if input_margin(&model, &input).unwrap() > 1e-3 {
                return (model, input);
            }
        }
    }

    #[test]
    fn full_model_three_reflections() {
        let (model, input) = setup(ReflectNetConfig::default(), 3, 0);
        let report = gradcheck(&model, &input, 2, 1e-5).unwrap();
        assert_eq!(report.per_parameter_errors.len(), 1284);
        assert!(report.max_relative_error < 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn ablated_model() {
        let (model, input) = setup(ReflectNetConfig::default().without_gcl(), 5, 1);
        let report = gradcheck(&model, &input, 0, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{:?}", report.worst());
    }
}
