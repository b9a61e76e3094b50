use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::{check_column, check_square, DiffusionKernel, Recorder, RoundingTrace};
use crate::error::{Error, Result};
use crate::grid::QuantGrid;
use crate::linalg::{self, CholeskyFactor};

/// Qronos, efficient form.
///
/// `h` and `g` are the (damped) second moments `Xt^T Xt` and `Xt^T X`, and
/// `factor` is the Cholesky factor of `h^-1`. The first step solves the mismatched
/// problem exactly using only `N x N` matrices; every later step is plain rounding
/// followed by the Cholesky-column correction.
pub fn quantize_qronos_column(
    w: ArrayView1<'_, f64>,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    factor: &CholeskyFactor,
    grid: &QuantGrid,
    record: bool,
) -> Result<RoundingTrace> {
    let n = check_square(h, "H")?;
    if g.dim() != h.dim() {
        return Err(Error::shape("G and H must have the same shape"));
    }
    check_column(w.len(), n, "H")?;
    check_column(factor.source_dim(), n, "H")?;
    let kernel = DiffusionKernel::new(factor)?;
    let gw = g.dot(&w);
    Ok(qronos_with_kernel(w, gw.view(), h, &kernel, grid, record))
}

/// `gw` is `G w`, precomputed by the caller (a single GEMM for a whole layer).
pub(crate) fn qronos_with_kernel(
    w: ArrayView1<'_, f64>,
    gw: ArrayView1<'_, f64>,
    h: ArrayView2<'_, f64>,
    kernel: &DiffusionKernel,
    grid: &QuantGrid,
    record: bool,
) -> RoundingTrace {
    let n = w.len();
    let mut state = w.to_vec();
    let mut rec = Recorder::new(record, &state);
    if n == 0 {
        return rec.finish(Array1::zeros(0), Vec::new());
    }

    let h_row0 = h.row(0);
    let mut num = gw[0];
    for j in 1..n {
        num -= h_row0[j] * w[j];
    }
    let q1 = grid.quantize(num / h[[0, 0]]);
    state[0] = q1;

    let mut delta = Vec::new();
    if n > 1 {
        let r: Vec<f64> = (1..n).map(|i| gw[i] - h[[i, 0]] * q1).collect();
        let w1 = kernel.trailing_gram_apply(&r);
        if rec.enabled() {
            delta = w1.iter().zip(&state[1..]).map(|(a, b)| a - b).collect();
        }
        state[1..].copy_from_slice(&w1);
    }
    rec.step(&state, &delta);

    kernel.diffuse_from(1, &mut state, grid, &mut rec);
    rec.finish(Array1::from(state), Vec::new())
}

/// Qronos, base form: every step re-solves the full least-squares problem.
///
/// `q_t = Q((G_t w - H_{t,<t} q_{<t} - H_{t,>t} w_{>t}) / H_tt)` and
/// `w_{>t} = (H_{>t,>t})^-1 (G_{>t} w - H_{>t,<=t} q_{<=t})`.
pub fn quantize_qronos_base_column(
    w: ArrayView1<'_, f64>,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    grid: &QuantGrid,
    record: bool,
) -> Result<RoundingTrace> {
    let n = check_square(h, "H")?;
    check_column(w.len(), n, "H")?;
    let block = w.to_owned().into_shape_with_order((n, 1)).expect("column reshape");
    let mut traces = qronos_base_block(block.view(), h, g, std::slice::from_ref(grid), record)?;
    Ok(traces.pop().expect("one column"))
}

/// Base form over several columns in lock step, sharing each trailing-block
/// factorization between columns.
pub(crate) fn qronos_base_block(
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    grids: &[QuantGrid],
    record: bool,
) -> Result<Vec<RoundingTrace>> {
    let n = check_square(h, "H")?;
    if g.dim() != h.dim() {
        return Err(Error::shape("G and H must have the same shape"));
    }
    check_column(w.nrows(), n, "H")?;
    let k = w.ncols();
    if grids.len() != k {
        return Err(Error::shape(format!("{} grids for {} columns", grids.len(), k)));
    }
    let gw = g.dot(&w);
    let mut state: Array2<f64> = w.as_standard_layout().into_owned();
    let mut recs: Vec<Recorder> = (0..k)
        .map(|c| Recorder::new(record, &state.column(c).to_vec()))
        .collect();
    let mut warnings: Vec<Vec<String>> = vec![Vec::new(); k];

    for t in 0..n {
        let htt = h[[t, t]];
        let h_state = h.row(t).dot(&state);
        for c in 0..k {
            let cur = state[[t, c]];
            let qt = if htt > 0.0 {
                let others = h_state[c] - htt * cur;
                grids[c].quantize((gw[[t, c]] - others) / htt)
            } else {
                warnings[c].push(format!(
                    "zero input column at position {}, plain rounding used",
                    t + 1
                ));
                grids[c].quantize(cur)
            };
            state[[t, c]] = qt;
        }

        let mut deltas: Option<Array2<f64>> = None;
        if t + 1 < n {
            let rhs = &gw.slice(s![t + 1.., ..])
                - &h.slice(s![t + 1.., ..=t]).dot(&state.slice(s![..=t, ..]));
            let factor = linalg::cholesky_lower(h.slice(s![t + 1.., t + 1..]))?;
            let sol = factor.solve_matrix(rhs.view());
            if record {
                deltas = Some(&sol - &state.slice(s![t + 1.., ..]));
            }
            state.slice_mut(s![t + 1.., ..]).assign(&sol);
        }
        if record {
            for (c, rec) in recs.iter_mut().enumerate() {
                let d = deltas.as_ref().map(|d| d.column(c).to_vec()).unwrap_or_default();
                rec.step(&state.column(c).to_vec(), &d);
            }
        }
    }

    Ok(recs
        .into_iter()
        .zip(warnings)
        .enumerate()
        .map(|(c, (rec, warn))| rec.finish(state.column(c).to_owned(), warn))
        .collect())
}
