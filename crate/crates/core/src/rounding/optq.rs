use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::{check_column, DiffusionKernel, Recorder, RoundingTrace};
use crate::error::{Error, Result};
use crate::grid::QuantGrid;
use crate::linalg::{self, CholeskyFactor};

/// OPTQ on one column given the Cholesky factor `L` of the (damped) `H^-1`.
///
/// `q_t = Q(w_t)`, then the remaining weights absorb the rounding error through
/// column `t` of `L`.
pub fn quantize_optq_column(
    w: ArrayView1<'_, f64>,
    factor: &CholeskyFactor,
    grid: &QuantGrid,
    record: bool,
) -> Result<RoundingTrace> {
    check_column(w.len(), factor.source_dim(), "the factor")?;
    let kernel = DiffusionKernel::new(factor)?;
    Ok(optq_with_kernel(w, &kernel, grid, record))
}

pub(crate) fn optq_with_kernel(
    w: ArrayView1<'_, f64>,
    kernel: &DiffusionKernel,
    grid: &QuantGrid,
    record: bool,
) -> RoundingTrace {
    let mut state = w.to_vec();
    let mut rec = Recorder::new(record, &state);
    kernel.diffuse_from(0, &mut state, grid, &mut rec);
    rec.finish(Array1::from(state), Vec::new())
}

/// `[X; sqrt(lambda) I]`: the ridge term expressed as extra rows.
pub(crate) fn augment(x: ArrayView2<'_, f64>, lambda: f64) -> Array2<f64> {
    if lambda <= 0.0 {
        return x.to_owned();
    }
    let (m, n) = x.dim();
    let mut out = Array2::zeros((m + n, n));
    out.slice_mut(s![..m, ..]).assign(&x);
    let r = lambda.sqrt();
    for j in 0..n {
        out[[m + j, j]] = r;
    }
    out
}

/// OPTQ as a sequence of explicit least-squares problems on the layer input `X`.
///
/// Each `q_t` minimizes the full residual `||Xw - sum_{j<t} q_j X_j - p X_t - sum_{j>t} w_j X_j||`
/// over the alphabet, then the remaining weights are re-solved against the
/// cumulative residual `Xw - X_{<=t} q_{<=t}`. A positive `lambda` appends the
/// rows `sqrt(lambda) I`, which reproduces OPTQ on `X^T X + lambda I`.
pub fn quantize_optq_column_ref(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    lambda: f64,
    grid: &QuantGrid,
    record: bool,
) -> Result<RoundingTrace> {
    let n = x.ncols();
    check_column(w.len(), n, "X")?;
    let xa = augment(x, lambda);
    let target = xa.dot(&w);
    let col_norms: Vec<f64> = (0..n).map(|j| xa.column(j).dot(&xa.column(j))).collect();

    let mut state = w.to_vec();
    let mut rec = Recorder::new(record, &state);
    let mut warnings = Vec::new();
    let mut delta = Vec::new();
    for t in 0..n {
        let cur = Array1::from(state.clone());
        // residual with coordinate t removed
        let mut resid = &target - &xa.dot(&cur);
        resid.scaled_add(cur[t], &xa.column(t));
        let qt = if col_norms[t] > 0.0 {
            grid.quantize(resid.dot(&xa.column(t)) / col_norms[t])
        } else {
            warnings.push(format!("zero input column at position {}, plain rounding used", t + 1));
            grid.quantize(state[t])
        };
        state[t] = qt;
        delta.clear();
        if t + 1 < n {
            let fixed = Array1::from(state[..=t].to_vec());
            let b = &target - &xa.slice(s![.., ..=t]).dot(&fixed);
            let tail = xa.slice(s![.., t + 1..]);
            let gram = tail.t().dot(&tail);
            let factor = linalg::cholesky_lower(gram.view()).map_err(Error::from)?;
            let v = factor.solve_vec(tail.t().dot(&b).view());
            for (k, vk) in v.iter().enumerate() {
                delta.push(vk - state[t + 1 + k]);
                state[t + 1 + k] = *vk;
            }
        }
        rec.step(&state, &delta);
    }
    Ok(rec.finish(Array1::from(state), warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grid_from_minmax;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn factor_of_inverse(x: &Array2<f64>, lambda: f64) -> CholeskyFactor {
        let mut h = x.t().dot(x);
        h.diag_mut().mapv_inplace(|d| d + lambda);
        linalg::cholesky_lower(linalg::spd_inverse(h.view()).unwrap().view()).unwrap()
    }

    #[test]
    fn on_grid_column_passes_through() {
        let grid = QuantGrid::new(4, 0.5, 2.0).unwrap();
        let w = array![-1.0, 0.5, 0.0, -0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((16, 4), |_| rng.sample(StandardNormal));
        let trace = quantize_optq_column(w.view(), &factor_of_inverse(&x, 0.0), &grid, true).unwrap();
        assert_eq!(trace.q, w);
        for d in trace.deltas.unwrap() {
            assert!(d.iter().all(|&v| v == 0.0));
        }
        let reference = quantize_optq_column_ref(w.view(), x.view(), 0.0, &grid, false).unwrap();
        assert_eq!(reference.q, w);
    }

    #[test]
    fn single_entry_is_plain_rounding() {
        let grid = QuantGrid::new(4, 0.5, 2.0).unwrap();
        let x = array![[1.0], [2.0]];
        let trace = quantize_optq_column(array![0.3].view(), &factor_of_inverse(&x, 0.0), &grid, false)
            .unwrap();
        assert_eq!(trace.q, array![grid.quantize(0.3)]);
    }

    #[test]
    fn orthogonal_inputs_reduce_to_rtn() {
        let x = Array2::from_diag(&array![1.0, 2.0, 3.0]);
        let w = array![0.26, -0.74, 0.1];
        let grid = grid_from_minmax(w.view(), 4, 1.0).unwrap();
        let trace = quantize_optq_column_ref(w.view(), x.view(), 0.0, &grid, false).unwrap();
        assert_eq!(trace.q, w.mapv(|v| grid.quantize(v)));
    }

    #[test]
    fn cholesky_and_least_squares_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for lambda in [0.0, 0.5] {
            let x = Array2::from_shape_fn((64, 8), |_| rng.sample(StandardNormal));
            let w = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
            let grid = grid_from_minmax(w.view(), 4, 1.0).unwrap();
            let fast = quantize_optq_column(w.view(), &factor_of_inverse(&x, lambda), &grid, true).unwrap();
            let slow = quantize_optq_column_ref(w.view(), x.view(), lambda, &grid, true).unwrap();
            assert_eq!(fast.q, slow.q);
            for (a, b) in fast.w_states.unwrap().iter().zip(slow.w_states.unwrap().iter()) {
                for (u, v) in a.iter().zip(b.iter()) {
                    assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
                }
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let grid = QuantGrid::new(4, 0.5, 2.0).unwrap();
        let x = Array2::<f64>::eye(3);
        assert!(quantize_optq_column(array![1.0, 2.0].view(), &factor_of_inverse(&x, 0.0), &grid, false)
            .is_err());
        assert!(quantize_optq_column_ref(array![1.0].view(), x.view(), 0.0, &grid, false).is_err());
    }
}
