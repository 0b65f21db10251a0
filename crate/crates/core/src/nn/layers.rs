use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, Mask, Matrix, NnError, Scalar};

/// Weights (`in_features x out_features`) and bias (`out_features`) of an
/// affine map. Also used to hold the gradients of such a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearParams<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self, NnError> {
        check_dim("LinearParams::new", weights.cols(), bias.len())?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weights: Matrix::zeros(in_features, out_features),
            bias: vec![T::zero(); out_features],
        }
    }

    /// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot_uniform<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_features + out_features) as f64).sqrt();
        let data = (0..in_features * out_features)
            .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
            .collect();
        Self {
            weights: Matrix::from_vec(in_features, out_features, data).expect("shape by construction"),
            bias: vec![T::zero(); out_features],
        }
    }

    #[inline]
    pub fn in_features(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_features(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> LinearParams<U> {
        LinearParams {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::from_f64_lossy(b.to_f64_lossy())).collect(),
        }
    }

    /// Adds `other * scale` element-wise.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.weights.data_mut().iter_mut().zip(other.weights.data()) {
            *a = *a + *b * scale;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + *b * scale;
        }
    }
}

#[inline]
fn affine_row<T: Scalar>(x: &[T], params: &LinearParams<T>, out: &mut [T]) {
    out.copy_from_slice(&params.bias);
    for (k, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(params.weights.row(k)) {
            *o = *o + xv * w;
        }
    }
}

/// Kernel-size-one 1-D convolution: the same affine map applied to every row.
pub fn rowwise_linear<T: Scalar>(x: &Matrix<T>, params: &LinearParams<T>) -> Result<Matrix<T>, NnError> {
    rowwise_linear_masked(x, params, &Mask::all(x.rows()))
}

/// Like [`rowwise_linear`] but only evaluates valid rows; masked rows of the
/// output are zero.
pub fn rowwise_linear_masked<T: Scalar>(
    x: &Matrix<T>,
    params: &LinearParams<T>,
    mask: &Mask,
) -> Result<Matrix<T>, NnError> {
    check_dim("rowwise_linear", params.in_features(), x.cols())?;
    check_dim("rowwise_linear mask", x.rows(), mask.len())?;
    let mut out = Matrix::zeros(x.rows(), params.out_features());
    for i in mask.valid_rows() {
        affine_row(x.row(i), params, out.row_mut(i));
    }
    Ok(out)
}

/// Returns `(grad_x, grad_params)` for `rowwise_linear`.
pub fn rowwise_linear_backward<T: Scalar>(
    x: &Matrix<T>,
    params: &LinearParams<T>,
    grad_out: &Matrix<T>,
) -> Result<(Matrix<T>, LinearParams<T>), NnError> {
    rowwise_linear_masked_backward(x, params, grad_out, &Mask::all(x.rows()))
}

pub fn rowwise_linear_masked_backward<T: Scalar>(
    x: &Matrix<T>,
    params: &LinearParams<T>,
    grad_out: &Matrix<T>,
    mask: &Mask,
) -> Result<(Matrix<T>, LinearParams<T>), NnError> {
    check_dim("rowwise_linear_backward", params.in_features(), x.cols())?;
    check_dim("rowwise_linear_backward rows", x.rows(), grad_out.rows())?;
    check_dim("rowwise_linear_backward cols", params.out_features(), grad_out.cols())?;
    check_dim("rowwise_linear_backward mask", x.rows(), mask.len())?;
    let mut grad_x = Matrix::zeros(x.rows(), x.cols());
    let mut grads = LinearParams::zeros(params.in_features(), params.out_features());
    for i in mask.valid_rows() {
        let g = grad_out.row(i);
        for (b, &gv) in grads.bias.iter_mut().zip(g) {
            *b = *b + gv;
        }
        let xi = x.row(i);
        for k in 0..params.in_features() {
            let w_row = params.weights.row(k);
            grad_x.set(i, k, w_row.iter().zip(g).map(|(&w, &gv)| w * gv).sum());
            let xv = xi[k];
            for (gw, &gv) in grads.weights.row_mut(k).iter_mut().zip(g) {
                *gw = *gw + xv * gv;
            }
        }
    }
    Ok((grad_x, grads))
}

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    out
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>, NnError> {
    check_dim("relu_backward", input.data().len(), grad_out.data().len())?;
    let mut out = grad_out.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if !(x > T::zero()) {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Per-feature maxima over the valid rows, with the row that won each one.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput<T> {
    pub values: Vec<T>,
    pub winners: Vec<usize>,
}

/// Per-feature maximum over the valid rows. Ties go to the lowest row index.
pub fn masked_global_max_pool<T: Scalar>(x: &Matrix<T>, mask: &Mask) -> Result<PoolOutput<T>, NnError> {
    check_dim("masked_global_max_pool mask", x.rows(), mask.len())?;
    let mut rows = mask.valid_rows();
    let first = rows.next().ok_or(NnError::EmptyPool {
        op: "masked_global_max_pool",
    })?;
    let mut values = x.row(first).to_vec();
    let mut winners = vec![first; x.cols()];
    for i in rows {
        for (j, &v) in x.row(i).iter().enumerate() {
            if v > values[j] {
                values[j] = v;
                winners[j] = i;
            }
        }
    }
    Ok(PoolOutput { values, winners })
}

/// Scatters the pooled gradient back to the winning rows.
pub fn max_pool_backward<T: Scalar>(rows: usize, winners: &[usize], grad: &[T]) -> Result<Matrix<T>, NnError> {
    check_dim("max_pool_backward", winners.len(), grad.len())?;
    let mut out = Matrix::zeros(rows, winners.len());
    for (j, (&w, &g)) in winners.iter().zip(grad).enumerate() {
        out.set(w, j, g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GclOutput<T> {
    /// `M x 2N`: each row is the local feature followed by the global one.
    pub output: Matrix<T>,
    pub pool: PoolOutput<T>,
}

/// Global context layer: pools the list into one `N`-vector and appends it to
/// every row, giving `M x 2N`.
pub fn global_context_layer<T: Scalar>(x: &Matrix<T>, mask: &Mask) -> Result<GclOutput<T>, NnError> {
    let pool = masked_global_max_pool(x, mask)?;
    let n = x.cols();
    let mut output = Matrix::zeros(x.rows(), 2 * n);
    for i in 0..x.rows() {
        let row = output.row_mut(i);
        row[..n].copy_from_slice(x.row(i));
        row[n..].copy_from_slice(&pool.values);
    }
    Ok(GclOutput { output, pool })
}

/// Gradient w.r.t. the GCL input: the local half passes straight through and
/// the global halves of all valid rows are summed into the pooling backward.
pub fn global_context_layer_backward<T: Scalar>(
    pool: &PoolOutput<T>,
    grad_out: &Matrix<T>,
    mask: &Mask,
) -> Result<Matrix<T>, NnError> {
    let n = pool.values.len();
    check_dim("global_context_layer_backward", 2 * n, grad_out.cols())?;
    check_dim("global_context_layer_backward mask", grad_out.rows(), mask.len())?;
    let mut grad_global = vec![T::zero(); n];
    let mut grad_x = Matrix::zeros(grad_out.rows(), n);
    for i in mask.valid_rows() {
        let g = grad_out.row(i);
        grad_x.row_mut(i).copy_from_slice(&g[..n]);
        for (acc, &gv) in grad_global.iter_mut().zip(&g[n..]) {
            *acc = *acc + gv;
        }
    }
    for (j, (&w, &g)) in pool.winners.iter().zip(&grad_global).enumerate() {
        grad_x.set(w, j, grad_x.get(w, j) + g);
    }
    Ok(grad_x)
}

/// Fully connected layer on a single vector.
pub fn dense<T: Scalar>(x: &[T], params: &LinearParams<T>) -> Result<Vec<T>, NnError> {
    check_dim("dense", params.in_features(), x.len())?;
    let mut out = vec![T::zero(); params.out_features()];
    affine_row(x, params, &mut out);
    Ok(out)
}

/// Returns `(grad_x, grad_params)` for `dense`.
pub fn dense_backward<T: Scalar>(
    x: &[T],
    params: &LinearParams<T>,
    grad_out: &[T],
) -> Result<(Vec<T>, LinearParams<T>), NnError> {
    check_dim("dense_backward", params.in_features(), x.len())?;
    check_dim("dense_backward grad", params.out_features(), grad_out.len())?;
    let mut grads = LinearParams::zeros(params.in_features(), params.out_features());
    grads.bias.copy_from_slice(grad_out);
    let mut grad_x = vec![T::zero(); x.len()];
    for (k, &xv) in x.iter().enumerate() {
        let w_row = params.weights.row(k);
        grad_x[k] = w_row.iter().zip(grad_out).map(|(&w, &g)| w * g).sum();
        for (gw, &g) in grads.weights.row_mut(k).iter_mut().zip(grad_out) {
            *gw = xv * g;
        }
    }
    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn rowwise_linear_identity() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = LinearParams::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(rowwise_linear(&x, &p).unwrap(), x);
    }

    #[test]
    fn rowwise_linear_sum_plus_bias() {
        // Hand multiply: [1,2]·[1,1] + 0.5 = 3.5, [3,4]·[1,1] + 0.5 = 7.5.
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = LinearParams::new(m(&[&[1.0], &[1.0]]), vec![0.5]).unwrap();
        assert_eq!(rowwise_linear(&x, &p).unwrap(), m(&[&[3.5], &[7.5]]));
    }

    #[test]
    fn rowwise_linear_bias_broadcast() {
        let x = m(&[&[7.0, -7.0]]);
        let p = LinearParams::new(Matrix::zeros(2, 3), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rowwise_linear(&x, &p).unwrap(), m(&[&[1.0, 2.0, 3.0]]));
    }

    #[test]
    fn rowwise_linear_shape_mismatch() {
        let x = m(&[&[1.0, 2.0, 3.0]]);
        let p = LinearParams::<f64>::zeros(2, 2);
        assert!(matches!(
            rowwise_linear(&x, &p),
            Err(NnError::DimensionMismatch {
                expected: 2,
                found: 3,
                ..
            })
        ));
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(&m(&[&[-1.0, 2.0]])), m(&[&[0.0, 2.0]]));
        assert_eq!(relu(&m(&[&[0.0]])), m(&[&[0.0]]));
        assert_eq!(relu(&m(&[&[3.5, -0.1, 0.1]])), m(&[&[3.5, 0.0, 0.1]]));
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let g = relu_backward(&m(&[&[0.0, 1.0, -1.0]]), &m(&[&[5.0, 5.0, 5.0]])).unwrap();
        assert_eq!(g, m(&[&[0.0, 5.0, 0.0]]));
    }

    #[test]
    fn pool_examples() {
        let x = m(&[&[1.0, 5.0], &[4.0, 2.0]]);
        let all = masked_global_max_pool(&x, &Mask::all(2)).unwrap();
        assert_eq!(all.values, vec![4.0, 5.0]);
        assert_eq!(all.winners, vec![1, 0]);
        let first = masked_global_max_pool(&x, &Mask::new(vec![true, false])).unwrap();
        assert_eq!(first.values, vec![1.0, 5.0]);
        let neg = masked_global_max_pool(&m(&[&[-3.0], &[-1.0]]), &Mask::all(2)).unwrap();
        assert_eq!(neg.values, vec![-1.0]);
    }

    #[test]
    fn pool_all_masked_is_an_error() {
        let x = m(&[&[1.0], &[2.0]]);
        assert!(matches!(
            masked_global_max_pool(&x, &Mask::new(vec![false, false])),
            Err(NnError::EmptyPool { .. })
        ));
        assert!(global_context_layer(&x, &Mask::new(vec![false, false])).is_err());
    }

    #[test]
    fn pool_ties_route_to_lowest_row() {
        let x = m(&[&[1.0], &[3.0], &[3.0]]);
        let pool = masked_global_max_pool(&x, &Mask::all(3)).unwrap();
        assert_eq!(pool.winners, vec![1]);
        let g = max_pool_backward(3, &pool.winners, &[2.0]).unwrap();
        assert_eq!(g, m(&[&[0.0], &[2.0], &[0.0]]));
    }

    #[test]
    fn gcl_examples() {
        let out = global_context_layer(&m(&[&[1.0, 2.0], &[3.0, 0.0]]), &Mask::all(2)).unwrap();
        assert_eq!(out.output, m(&[&[1.0, 2.0, 3.0, 2.0], &[3.0, 0.0, 3.0, 2.0]]));

        let out = global_context_layer(&m(&[&[1.0, 2.0], &[9.0, 9.0]]), &Mask::new(vec![true, false])).unwrap();
        assert_eq!(out.output.row(0), &[1.0, 2.0, 1.0, 2.0]);

        let out = global_context_layer(&m(&[&[0.25, -4.0]]), &Mask::all(1)).unwrap();
        assert_eq!(out.output, m(&[&[0.25, -4.0, 0.25, -4.0]]));
    }

    #[test]
    fn gcl_backward_sums_global_half_into_winner() {
        let x = m(&[&[1.0, 2.0], &[3.0, 0.0], &[9.0, 9.0]]);
        let mask = Mask::new(vec![true, true, false]);
        let out = global_context_layer(&x, &mask).unwrap();
        let grad_out = m(&[&[1.0, 1.0, 10.0, 20.0], &[2.0, 2.0, 30.0, 40.0], &[7.0, 7.0, 7.0, 7.0]]);
        let g = global_context_layer_backward(&out.pool, &grad_out, &mask).unwrap();
        // Feature 0 won by row 1, feature 1 won by row 0; masked row gets nothing.
        assert_eq!(g, m(&[&[1.0, 1.0 + 60.0], &[2.0 + 40.0, 2.0], &[0.0, 0.0]]));
    }

    #[test]
    fn dense_examples() {
        let p = LinearParams::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(dense(&[1.0, 0.0], &p).unwrap(), vec![1.0, 0.0]);
        let p = LinearParams::new(m(&[&[1.0, 0.0], &[0.0, 2.0]]), vec![-1.0, -1.0]).unwrap();
        assert_eq!(dense(&[2.0, 3.0], &p).unwrap(), vec![1.0, 5.0]);
        let p = LinearParams::new(m(&[&[4.0, -3.0], &[8.0, 1.5]]), vec![0.5, -2.0]).unwrap();
        assert_eq!(dense(&[0.0, 0.0], &p).unwrap(), vec![0.5, -2.0]);
        assert!(dense(&[1.0], &p).is_err());
    }

    #[test]
    fn masked_rows_stay_zero() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = LinearParams::new(m(&[&[1.0], &[1.0]]), vec![0.5]).unwrap();
        let out = rowwise_linear_masked(&x, &p, &Mask::new(vec![false, true])).unwrap();
        assert_eq!(out, m(&[&[0.0], &[7.5]]));
    }
}
