//! Dense symmetric linear algebra used by the rounding algorithms.
//!
//! Everything here works on row-major `f64` matrices. Factorizations are plain
//! (unpivoted, unblocked) and deterministic for a fixed input.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite: non-positive pivot at index {index}")]
    NotPositiveDefinite { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("power iteration did not converge in {iterations} iterations (last estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("leading entry must be positive, got {value}")]
    NonPositiveLeading { value: f64 },
}

type Result<T> = std::result::Result<T, LinalgError>;

const SYMMETRY_RTOL: f64 = 1e-9;

fn check_square(m: &ArrayView2<'_, f64>) -> Result<usize> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    Ok(rows)
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Lower-triangular Cholesky factor `L` with `M = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: Array2<f64>,
}

impl CholeskyFactor {
    pub fn l(&self) -> ArrayView2<'_, f64> {
        self.l.view()
    }

    pub fn source_dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.l
    }

    /// `L L^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.l.dot(&self.l.t())
    }

    /// Solves `L Y = B` in place (forward substitution, several right-hand sides).
    pub fn solve_lower_in_place(&self, b: &mut Array2<f64>) {
        let n = self.source_dim();
        assert_eq!(b.nrows(), n);
        let k = b.ncols();
        let l = self.l.as_slice().expect("standard layout");
        let buf = b.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let (head, tail) = buf.split_at_mut(i * k);
            let row_i = &mut tail[..k];
            for j in 0..i {
                let lij = l[i * n + j];
                if lij != 0.0 {
                    axpy(-lij, &head[j * k..(j + 1) * k], row_i);
                }
            }
            let inv = 1.0 / l[i * n + i];
            row_i.iter_mut().for_each(|v| *v *= inv);
        }
    }

    /// Solves `L^T X = Y` in place (back substitution, several right-hand sides).
    pub fn solve_upper_in_place(&self, b: &mut Array2<f64>) {
        let n = self.source_dim();
        assert_eq!(b.nrows(), n);
        let k = b.ncols();
        let l = self.l.as_slice().expect("standard layout");
        let buf = b.as_slice_mut().expect("standard layout");
        for i in (0..n).rev() {
            let (head, tail) = buf.split_at_mut(i * k);
            let row_i = &mut tail[..k];
            let inv = 1.0 / l[i * n + i];
            row_i.iter_mut().for_each(|v| *v *= inv);
            for j in 0..i {
                let lij = l[i * n + j];
                if lij != 0.0 {
                    axpy(-lij, row_i, &mut head[j * k..(j + 1) * k]);
                }
            }
        }
    }

    /// Solves `M X = B` for the factored `M`.
    pub fn solve_matrix(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut x = b.as_standard_layout().into_owned();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let x = self.solve_matrix(b.insert_axis(Axis(1)));
        x.index_axis_move(Axis(1), 0)
    }
}

/// Cholesky factorization `M = L L^T` of a symmetric positive-definite matrix.
///
/// Fails with the (1-based) index of the first non-positive pivot.
pub fn cholesky_lower(m: ArrayView2<'_, f64>) -> Result<CholeskyFactor> {
    let n = check_square(&m)?;
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let asym = asymmetry(m);
    if asym > SYMMETRY_RTOL * scale.max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    {
        let buf = l.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for j in 0..=i {
                let (before, from_i) = buf.split_at_mut(i * n);
                let row_i = &from_i[..n];
                let partial = if j < i {
                    dot(&row_i[..j], &before[j * n..j * n + j])
                } else {
                    dot(&row_i[..j], &row_i[..j])
                };
                let sum = m[[i, j]] - partial;
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { index: i + 1 });
                    }
                    from_i[i] = sum.sqrt();
                } else {
                    from_i[j] = sum / before[j * n + j];
                }
            }
        }
    }
    Ok(CholeskyFactor { l })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, symmetrized.
pub fn spd_inverse(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let factor = cholesky_lower(m)?;
    let mut inv = factor.solve_matrix(Array2::eye(factor.source_dim()).view());
    symmetrize(&mut inv);
    Ok(inv)
}

pub const DEFAULT_POWER_TOL: f64 = 1e-6;
pub const DEFAULT_POWER_MAX_ITER: usize = 1000;
const POWER_RESTART_SEED: u64 = 0x5eed_0001;

/// Largest eigenvalue (= largest singular value) of a symmetric PSD matrix.
///
/// Power iteration from the normalized all-ones vector; a seeded random start is
/// used if the iterate collapses to zero. Stops when `||M v - rho v|| <= tol * rho`.
pub fn top_singular_value(m: ArrayView2<'_, f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = check_square(&m)?;
    if n == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut restarted = false;
    let mut estimate = 0.0;
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        let y = m.dot(&v);
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            if restarted {
                break;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(POWER_RESTART_SEED);
            v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let vn = v.dot(&v).sqrt();
            v /= vn;
            restarted = true;
            continue;
        }
        let rho = v.dot(&y);
        estimate = rho;
        let r = &y - &(&v * rho);
        let resid = r.dot(&r).sqrt();
        if resid <= tol * rho.abs() {
            return Ok(rho);
        }
        v = y / norm;
    }
    Err(LinalgError::NoConvergence {
        iterations: iter,
        estimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMode {
    /// `lambda = alpha * mean(diag H)`; `alpha = 0.01` is the usual 1 % rule.
    MeanDiagPercent,
    /// `lambda = alpha * sigma_1(H)`, bounding the condition number by `1 / alpha`.
    TopSingularFraction,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingPolicy {
    pub mode: DampingMode,
    pub alpha: f64,
    /// Filled in by [`apply_damping`].
    pub resolved_lambda: f64,
}

impl DampingPolicy {
    pub fn mean_diag() -> Self {
        Self::mean_diag_fraction(0.01)
    }

    pub fn mean_diag_fraction(alpha: f64) -> Self {
        Self {
            mode: DampingMode::MeanDiagPercent,
            alpha,
            resolved_lambda: 0.0,
        }
    }

    pub fn top_singular(alpha: f64) -> Self {
        Self {
            mode: DampingMode::TopSingularFraction,
            alpha,
            resolved_lambda: 0.0,
        }
    }

    pub fn none() -> Self {
        Self {
            mode: DampingMode::None,
            alpha: 0.0,
            resolved_lambda: 0.0,
        }
    }

    /// Resolves `lambda` for `h` without building the damped matrix.
    pub fn resolve(&self, h: ArrayView2<'_, f64>) -> Result<f64> {
        let n = check_square(&h)?;
        let lambda = match self.mode {
            DampingMode::None => 0.0,
            DampingMode::MeanDiagPercent => {
                if n == 0 {
                    0.0
                } else {
                    self.alpha * h.diag().sum() / n as f64
                }
            }
            DampingMode::TopSingularFraction => {
                let sigma = match top_singular_value(h, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER) {
                    Ok(s) => s,
                    // slow convergence only costs digits of lambda
                    Err(LinalgError::NoConvergence { estimate, .. }) => estimate,
                    Err(e) => return Err(e),
                };
                self.alpha * sigma
            }
        };
        Ok(lambda.max(0.0))
    }
}

/// `H + lambda I` with `lambda` resolved from `policy`.
pub fn apply_damping(
    h: ArrayView2<'_, f64>,
    policy: DampingPolicy,
) -> Result<(Array2<f64>, DampingPolicy)> {
    let lambda = policy.resolve(h)?;
    let mut damped = h.to_owned();
    if lambda > 0.0 {
        damped.diag_mut().mapv_inplace(|d| d + lambda);
    }
    Ok((
        damped,
        DampingPolicy {
            resolved_lambda: lambda,
            ..policy
        },
    ))
}

/// Given `(H_{>=t,>=t})^{-1}`, returns `(H_{>=t+1,>=t+1})^{-1}` by a rank-one
/// update followed by dropping the first row and column.
pub fn inverse_hessian_step(hinv: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = check_square(&hinv)?;
    if n == 0 {
        return Err(LinalgError::DimensionMismatch("empty matrix".into()));
    }
    let lead = hinv[[0, 0]];
    if !(lead > 0.0) {
        return Err(LinalgError::NonPositiveLeading { value: lead });
    }
    let col = hinv.slice(s![1.., 0]);
    let mut out = hinv.slice(s![1.., 1..]).to_owned();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            out[[i, j]] -= col[i] * col[j] / lead;
        }
    }
    Ok(out)
}

/// Component of `r` orthogonal to the column space of `b`: `r - B (B^T B)^{-1} B^T r`.
///
/// One refinement pass is applied to tighten orthogonality.
pub fn project_residual(r: ArrayView1<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if r.len() != b.nrows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "residual has {} entries but basis has {} rows",
            r.len(),
            b.nrows()
        )));
    }
    if b.ncols() == 0 {
        return Ok(r.to_owned());
    }
    let gram = b.t().dot(&b);
    let factor = cholesky_lower(gram.view())?;
    let mut out = r.to_owned();
    for _ in 0..2 {
        let coef = factor.solve_vec(b.t().dot(&out).view());
        out -= &b.dot(&coef);
    }
    Ok(out)
}
