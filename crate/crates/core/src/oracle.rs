//! Independent reference solvers for checking the rounding routines.
//!
//! Nothing here calls into [`crate::rounding`] or the factorizations of
//! [`crate::linalg`]; dense solves go through `nalgebra` instead.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::QuantGrid;

/// Largest enumeration [`brute_force_ils`] performs unless told otherwise.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 20;

/// Objective differences up to this (relative) size count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_na_vec(v: ArrayView1<'_, f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

fn strictly_better(candidate: f64, best: f64) -> bool {
    candidate < best - TIE_TOLERANCE * best.abs().max(1.0)
}

/// `1/2 ||X w - Xt q||^2`, evaluated directly.
pub fn objective(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    q: ArrayView1<'_, f64>,
) -> f64 {
    let r = x.dot(&w) - xt.dot(&q);
    0.5 * r.dot(&r)
}

/// Global minimizer of `1/2 ||X w - Xt q||^2` over `q` in `A^N` by exhaustive search.
///
/// Codes are enumerated in lexicographic order (first coordinate most
/// significant) and the first candidate wins ties. Fails when `levels^N`
/// exceeds `cap`.
pub fn brute_force_ils(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    grid: &QuantGrid,
    cap: u128,
) -> Result<(Array1<f64>, f64)> {
    if x.dim() != xt.dim() || w.len() != x.ncols() {
        return Err(Error::shape("X, Xt and w do not agree"));
    }
    let n = w.len();
    let levels = u128::from(grid.levels());
    let required = (0..n).try_fold(1u128, |acc, _| acc.checked_mul(levels)).unwrap_or(u128::MAX);
    if required > cap {
        return Err(Error::EnumerationCap { required, cap });
    }
    let alphabet = grid.alphabet();
    // 1/2 q^T H q - q^T b + const, with H = Xt^T Xt and b = Xt^T X w
    let h = xt.t().dot(&xt);
    let b = xt.t().dot(&x.dot(&w));

    let mut codes = vec![0usize; n];
    let mut q = vec![alphabet[0]; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let mut val = 0.0;
        for i in 0..n {
            let mut hi = 0.0;
            for j in 0..n {
                hi += h[[i, j]] * q[j];
            }
            val += q[i] * (0.5 * hi - b[i]);
        }
        if best.as_ref().is_none_or(|(v, _)| strictly_better(val, *v)) {
            best = Some((val, q.clone()));
        }
        // odometer increment, last coordinate fastest
        let mut i = n;
        loop {
            if i == 0 {
                let (_, q_best) = best.expect("at least one candidate");
                let q_best = Array1::from(q_best);
                let obj = objective(w, x, xt, q_best.view());
                return Ok((q_best, obj));
            }
            i -= 1;
            codes[i] += 1;
            if codes[i] < alphabet.len() {
                q[i] = alphabet[codes[i]];
                break;
            }
            codes[i] = 0;
            q[i] = alphabet[0];
        }
    }
}

/// The one-dimensional problem solved at step `t` of a greedy method.
#[derive(Debug, Clone, Copy)]
pub enum StepState<'a> {
    /// Minimize `||X w - sum_{j != t} state_j Xt_j - p Xt_t||` over `p`: the
    /// coordinates before `t` hold quantized values, those after `t` the
    /// current real-valued weights.
    Residual {
        w: ArrayView1<'a, f64>,
        state: ArrayView1<'a, f64>,
    },
    /// Minimize `||sum_{j<=t} w_j X_j - sum_{j<t} q_j Xt_j - p Xt_t||` over `p`.
    PathPrefix {
        w: ArrayView1<'a, f64>,
        q_prefix: ArrayView1<'a, f64>,
    },
}

/// Exact minimizer over the alphabet of the step-`t` problem (0-based `t`),
/// found by trying every grid value. Lower codes win ties.
pub fn stepwise_argmin_oracle(
    state: &StepState<'_>,
    x: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    grid: &QuantGrid,
    t: usize,
) -> Result<f64> {
    if x.dim() != xt.dim() || t >= x.ncols() {
        return Err(Error::shape("step index or activation shapes out of range"));
    }
    let n = x.ncols();
    let r: Array1<f64> = match state {
        StepState::Residual { w, state } => {
            if w.len() != n || state.len() != n {
                return Err(Error::shape("state length does not match X"));
            }
            let mut others = state.to_owned();
            others[t] = 0.0;
            x.dot(w) - xt.dot(&others)
        }
        StepState::PathPrefix { w, q_prefix } => {
            if w.len() != n || q_prefix.len() < t {
                return Err(Error::shape("state length does not match X"));
            }
            x.slice(s![.., ..=t]).dot(&w.slice(s![..=t]))
                - xt.slice(s![.., ..t]).dot(&q_prefix.slice(s![..t]))
        }
    };
    let col = xt.column(t);
    let mut best: Option<(f64, f64)> = None;
    for p in grid.alphabet() {
        let d = &r - &(&col * p);
        let val = d.dot(&d);
        if best.is_none_or(|(v, _)| strictly_better(val, v)) {
            best = Some((val, p));
        }
    }
    Ok(best.expect("grid has at least two levels").1)
}

/// `argmin_v ||A v - b||^2 + lambda ||v||^2` through a Householder QR of `[A; sqrt(lambda) I]`.
pub fn direct_lstsq(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64) -> Result<Array1<f64>> {
    let (m, n) = a.dim();
    if b.len() != m {
        return Err(Error::shape(format!("A has {m} rows but b has {}", b.len())));
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let extra = if lambda > 0.0 { n } else { 0 };
    if m + extra < n {
        return Err(Error::invalid("underdetermined system without damping"));
    }
    let mut aug = DMatrix::zeros(m + extra, n);
    aug.view_mut((0, 0), (m, n)).copy_from(&to_na(a));
    let mut rhs = DVector::zeros(m + extra);
    rhs.rows_mut(0, m).copy_from(&to_na_vec(b));
    if extra > 0 {
        let r = lambda.sqrt();
        for j in 0..n {
            aug[(m + j, j)] = r;
        }
    }
    let qr = aug.qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * rhs;
    let scale = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid("least-squares system is rank deficient"));
    }
    let v = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::invalid("least-squares system is rank deficient"))?;
    Ok(Array1::from_iter(v.iter().copied()))
}

/// Dense inverse through LU with partial pivoting.
pub fn direct_inverse(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape("matrix is not square"));
    }
    let inv = to_na(m)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::invalid("matrix is singular"))?;
    Ok(Array2::from_shape_fn(m.dim(), |(i, j)| inv[(i, j)]))
}

/// Step-by-step OPTQ states written as local least-squares corrections:
/// `q_t = Q(w_t)` and `w_{>t} += (w_t - q_t) argmin_v ||X_{>t} v - X_t||`.
///
/// Returns `N + 1` states, the first being `w`.
pub fn optq_local_trajectory(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    grid: &QuantGrid,
) -> Result<Vec<Array1<f64>>> {
    let n = x.ncols();
    if w.len() != n {
        return Err(Error::shape("w does not match X"));
    }
    let mut state = w.to_owned();
    let mut out = vec![state.clone()];
    for t in 0..n {
        let wt = state[t];
        let qt = grid.quantize(wt);
        state[t] = qt;
        if t + 1 < n {
            let coef = direct_lstsq(x.slice(s![.., t + 1..]), x.column(t), 0.0)?;
            state.slice_mut(s![t + 1..]).scaled_add(wt - qt, &coef);
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Step-by-step states of the greedy mismatched-residual method written with
/// explicit least squares on the activations:
/// `q_t = argmin_p ||X w - Xt_{<t} q_{<t} - p Xt_t - Xt_{>t} w_{>t}||` and
/// `w_{>t} = argmin_v ||X w - Xt_{<=t} q_{<=t} - Xt_{>t} v||`.
///
/// With `Xt = X` this is OPTQ; with mismatched inputs it is Qronos.
/// Returns `N + 1` states, the first being `w`.
pub fn residual_trajectory(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    grid: &QuantGrid,
) -> Result<Vec<Array1<f64>>> {
    let n = x.ncols();
    if w.len() != n || x.dim() != xt.dim() {
        return Err(Error::shape("w, X and Xt do not agree"));
    }
    let target = x.dot(&w);
    let mut state = w.to_owned();
    let mut out = vec![state.clone()];
    for t in 0..n {
        let mut others = state.clone();
        others[t] = 0.0;
        let r = &target - &xt.dot(&others);
        let col = xt.column(t);
        state[t] = grid.quantize(r.dot(&col) / col.dot(&col));
        if t + 1 < n {
            let fixed = xt.slice(s![.., ..=t]).dot(&state.slice(s![..=t]));
            let v = direct_lstsq(xt.slice(s![.., t + 1..]), (&target - &fixed).view(), 0.0)?;
            state.slice_mut(s![t + 1..]).assign(&v);
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// First step of the mismatched method in pseudoinverse form:
/// `q_1 = Q(<Xt_1, X w - Xt_{>=2} w_{>=2}> / ||Xt_1||^2)`,
/// `w_{>=2} = pinv(Xt_{>=2}) (X w - Xt_1 q_1)`.
pub fn first_step_pinv(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    grid: &QuantGrid,
) -> Result<(f64, Array1<f64>)> {
    let n = x.ncols();
    if n == 0 || w.len() != n || x.dim() != xt.dim() {
        return Err(Error::shape("w, X and Xt do not agree"));
    }
    let target = x.dot(&w);
    let tail = xt.slice(s![.., 1..]);
    let col = xt.column(0);
    let r = &target - &tail.dot(&w.slice(s![1..]));
    let q1 = grid.quantize(r.dot(&col) / col.dot(&col));
    let rest = &target - &(&col * q1);
    let w1 = direct_lstsq(tail, rest.view(), 0.0)?;
    Ok((q1, w1))
}
