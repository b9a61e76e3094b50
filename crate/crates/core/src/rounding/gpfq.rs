use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{check_column, check_square, Recorder, RoundingTrace};
use crate::error::{Error, Result};
use crate::grid::QuantGrid;

/// Greedy path following: keeps `sum_{j<=t} q_j Xt_j` close to `sum_{j<=t} w_j X_j`.
///
/// The running residual `u` starts at zero;
/// `q_t = Q(<u + w_t X_t, Xt_t> / ||Xt_t||^2)` and `u += w_t X_t - q_t Xt_t`.
pub fn quantize_gpfq_column(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    grid: &QuantGrid,
    record: bool,
) -> Result<RoundingTrace> {
    if x.dim() != xt.dim() {
        return Err(Error::shape(format!(
            "X is {}x{} but Xt is {}x{}",
            x.nrows(),
            x.ncols(),
            xt.nrows(),
            xt.ncols()
        )));
    }
    let n = x.ncols();
    check_column(w.len(), n, "X")?;
    let mut u = Array1::<f64>::zeros(x.nrows());
    let mut state = w.to_vec();
    let mut rec = Recorder::new(record, &state);
    let mut warnings = Vec::new();
    for t in 0..n {
        let xt_t = xt.column(t);
        let norm = xt_t.dot(&xt_t);
        u.scaled_add(w[t], &x.column(t));
        let qt = if norm > 0.0 {
            grid.quantize(u.dot(&xt_t) / norm)
        } else {
            warnings.push(zero_column_warning(t));
            grid.quantize(w[t])
        };
        u.scaled_add(-qt, &xt_t);
        state[t] = qt;
        rec.step(&state, &[]);
    }
    Ok(rec.finish(Array1::from(state), warnings))
}

/// The same iteration written on the second moments `H = Xt^T Xt`, `G = Xt^T X`:
/// `<u_{t-1} + w_t X_t, Xt_t> = sum_{j<=t} G_tj w_j - sum_{j<t} H_tj q_j`.
pub fn quantize_gpfq_column_stats(
    w: ArrayView1<'_, f64>,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    grid: &QuantGrid,
    record: bool,
) -> Result<RoundingTrace> {
    let n = check_square(h, "H")?;
    if g.dim() != h.dim() {
        return Err(Error::shape("G and H must have the same shape"));
    }
    check_column(w.len(), n, "H")?;
    let mut state = w.to_vec();
    let mut rec = Recorder::new(record, &state);
    let mut warnings = Vec::new();
    for t in 0..n {
        let htt = h[[t, t]];
        let qt = if htt > 0.0 {
            let mut num = 0.0;
            for j in 0..=t {
                num += g[[t, j]] * w[j];
            }
            for j in 0..t {
                num -= h[[t, j]] * state[j];
            }
            grid.quantize(num / htt)
        } else {
            warnings.push(zero_column_warning(t));
            grid.quantize(w[t])
        };
        state[t] = qt;
        rec.step(&state, &[]);
    }
    Ok(rec.finish(Array1::from(state), warnings))
}

fn zero_column_warning(t: usize) -> String {
    format!("zero input column at position {}, plain rounding used", t + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grid_from_minmax;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn orthogonal_matched_on_grid_passes_through() {
        let x = Array2::from_diag(&array![1.0, 2.0, 0.5]);
        let grid = QuantGrid::new(4, 0.5, 2.0).unwrap();
        let w = array![-1.0, 0.5, 0.0];
        let trace = quantize_gpfq_column(w.view(), x.view(), x.view(), &grid, false).unwrap();
        assert_eq!(trace.q, w);
    }

    #[test]
    fn single_entry_formula() {
        let x = array![[1.0], [2.0]];
        let xt = array![[1.5], [1.0]];
        let grid = QuantGrid::new(8, 0.25, 4.0).unwrap();
        let trace = quantize_gpfq_column(array![0.4].view(), x.view(), xt.view(), &grid, false).unwrap();
        let expected = grid.quantize((1.5 * 0.4 + 2.0 * 0.4) / (1.5 * 1.5 + 1.0));
        assert_eq!(trace.q[0], expected);
    }

    #[test]
    fn zero_column_falls_back_to_rounding() {
        let x = array![[1.0, 0.0], [0.0, 0.0]];
        let grid = QuantGrid::new(4, 0.5, 2.0).unwrap();
        let trace = quantize_gpfq_column(array![0.3, 0.2].view(), x.view(), x.view(), &grid, false)
            .unwrap();
        assert_eq!(trace.warnings.len(), 1);
        assert_eq!(trace.q[1], grid.quantize(0.2));
    }

    #[test]
    fn stats_form_matches_activation_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = Array2::from_shape_fn((48, 6), |_| rng.sample(StandardNormal));
            let noise = Array2::from_shape_fn((48, 6), |_| rng.sample::<f64, _>(StandardNormal));
            let xt = &x + &(noise * 0.1);
            let w = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
            let grid = grid_from_minmax(w.view(), 4, 1.0).unwrap();
            let a = quantize_gpfq_column(w.view(), x.view(), xt.view(), &grid, false).unwrap();
            let h = xt.t().dot(&xt);
            let g = xt.t().dot(&x);
            let b = quantize_gpfq_column_stats(w.view(), h.view(), g.view(), &grid, false).unwrap();
            assert_eq!(a.q, b.q);
        }
    }
}
