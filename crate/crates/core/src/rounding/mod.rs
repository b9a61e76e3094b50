//! Rounding algorithms for a single layer.
//!
//! Each column `w` of a weight matrix is quantized independently. The column
//! routines here expose the per-step state so the equivalence between the
//! different formulations can be checked directly; [`quantize_layer`] is the
//! entry point used by everything else.

mod gpfq;
mod layer;
mod optq;
mod qronos;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;

pub use gpfq::{quantize_gpfq_column, quantize_gpfq_column_stats};
pub use layer::{
    default_damping, quantize_layer, quantize_rtn_layer, Activations, LayerQuantRequest,
    LayerReport, LayerResult, ObjectiveForm, OrderPolicy,
};
pub use optq::{quantize_optq_column, quantize_optq_column_ref};
pub use qronos::{quantize_qronos_base_column, quantize_qronos_column};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rtn,
    Optq,
    OptqRef,
    Gpfq,
    QronosBase,
    Qronos,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Rtn,
        Method::Optq,
        Method::OptqRef,
        Method::Gpfq,
        Method::QronosBase,
        Method::Qronos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rtn => "rtn",
            Method::Optq => "optq",
            Method::OptqRef => "optq-ref",
            Method::Gpfq => "gpfq",
            Method::QronosBase => "qronos-base",
            Method::Qronos => "qronos",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Output of a column routine.
///
/// `w_states[t]` is the full state `(q_1..q_t, w^(t)_{t+1..N})` after step `t`,
/// with `w_states[0]` the input column. `deltas[t - 1]` is the correction applied
/// to the not-yet-quantized entries at step `t` (length `N - t`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundingTrace {
    pub q: Array1<f64>,
    pub w_states: Option<Vec<Array1<f64>>>,
    pub deltas: Option<Vec<Array1<f64>>>,
    pub objective: Option<f64>,
    pub warnings: Vec<String>,
}

/// Collects per-step states when tracing is enabled.
pub(crate) struct Recorder {
    states: Option<Vec<Array1<f64>>>,
    deltas: Option<Vec<Array1<f64>>>,
}

impl Recorder {
    pub(crate) fn new(enabled: bool, initial: &[f64]) -> Self {
        if enabled {
            Self {
                states: Some(vec![Array1::from(initial.to_vec())]),
                deltas: Some(Vec::with_capacity(initial.len())),
            }
        } else {
            Self {
                states: None,
                deltas: None,
            }
        }
    }

    pub(crate) fn enabled(&self) -> bool {
        self.states.is_some()
    }

    pub(crate) fn step(&mut self, state: &[f64], delta: &[f64]) {
        if let (Some(states), Some(deltas)) = (&mut self.states, &mut self.deltas) {
            states.push(Array1::from(state.to_vec()));
            deltas.push(Array1::from(delta.to_vec()));
        }
    }

    pub(crate) fn finish(self, q: Array1<f64>, warnings: Vec<String>) -> RoundingTrace {
        RoundingTrace {
            q,
            w_states: self.states,
            deltas: self.deltas,
            objective: None,
            warnings,
        }
    }
}

/// Cholesky factor of `H^-1` rearranged for the per-step correction
/// `Delta^(t) = -(w_t - q_t) L_{>t,t} / L_tt`.
///
/// Row `t` of `ratios` holds `L_{i,t} / L_{t,t}` for `i > t`, so each update is a
/// contiguous axpy.
pub(crate) struct DiffusionKernel {
    l: Array2<f64>,
    ratios: Array2<f64>,
}

impl DiffusionKernel {
    pub(crate) fn new(factor: &CholeskyFactor) -> Result<Self> {
        let l = factor.l().to_owned();
        let n = l.nrows();
        let mut ratios = Array2::zeros((n, n));
        for t in 0..n {
            let ltt = l[[t, t]];
            if !(ltt > 0.0) {
                return Err(Error::invalid(format!(
                    "Cholesky factor has non-positive diagonal {ltt} at index {}",
                    t + 1
                )));
            }
            for i in t + 1..n {
                ratios[[t, i]] = l[[i, t]] / ltt;
            }
        }
        Ok(Self { l, ratios })
    }

    pub(crate) fn dim(&self) -> usize {
        self.l.nrows()
    }

    fn ratio_row(&self, t: usize) -> &[f64] {
        let n = self.dim();
        &self.ratios.as_slice().expect("standard layout")[t * n + t + 1..(t + 1) * n]
    }

    fn l_row(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.l.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }

    /// Runs the RTN-plus-correction steps `t = start..N` on `state` in place.
    pub(crate) fn diffuse_from(
        &self,
        start: usize,
        state: &mut [f64],
        grid: &crate::grid::QuantGrid,
        rec: &mut Recorder,
    ) {
        let n = self.dim();
        let mut delta = Vec::new();
        for t in start..n {
            let wt = state[t];
            let qt = grid.quantize(wt);
            state[t] = qt;
            let err = wt - qt;
            let tail = &mut state[t + 1..];
            if rec.enabled() {
                delta.clear();
                delta.extend(self.ratio_row(t).iter().map(|r| -err * r));
            }
            if err != 0.0 {
                crate::linalg::axpy(-err, self.ratio_row(t), tail);
            }
            rec.step(state, &delta);
        }
    }

    /// `L_{>=2,>=2} L_{>=2,>=2}^T r` for `r` indexed over positions `1..N`.
    pub(crate) fn trailing_gram_apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(r.len(), n - 1);
        // y = L2^T r, accumulated row by row of L2
        let mut y = vec![0.0; n - 1];
        for (i, &ri) in r.iter().enumerate() {
            if ri != 0.0 {
                let row = &self.l_row(i + 1)[1..i + 2];
                crate::linalg::axpy(ri, row, &mut y[..=i]);
            }
        }
        (0..n - 1)
            .map(|i| crate::linalg::dot(&self.l_row(i + 1)[1..i + 2], &y[..=i]))
            .collect()
    }
}

pub(crate) fn check_column(w_len: usize, n: usize, what: &str) -> Result<()> {
    if w_len != n {
        return Err(Error::shape(format!("column has {w_len} entries but {what} has dimension {n}")));
    }
    Ok(())
}

pub(crate) fn check_square(m: ArrayView2<'_, f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(format!("{what} is {}x{}, expected square", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}
