use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gpfq::quantize_gpfq_column_stats;
use super::optq::{optq_with_kernel, quantize_optq_column_ref};
use super::qronos::{qronos_base_block, qronos_with_kernel};
use super::{DiffusionKernel, Method, RoundingTrace};
use crate::calib::{CalibStats, ColumnOrder};
use crate::error::{Error, Result};
use crate::grid::QuantGrid;
use crate::linalg::{self, DampingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderPolicy {
    /// Descending diagonal of `H`, ties in original order.
    Diag,
    Natural,
}

/// Raw calibration activations, used only to report `1/2 ||Xw - Xt q||^2`.
#[derive(Debug, Clone, Copy)]
pub struct Activations<'a> {
    pub x: ArrayView2<'a, f64>,
    pub xt: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone)]
pub struct LayerQuantRequest<'a> {
    /// `N x N'`: one column per output channel.
    pub weights: ArrayView2<'a, f64>,
    pub stats: &'a CalibStats,
    pub grids: &'a [QuantGrid],
    pub damping: DampingPolicy,
    pub method: Method,
    pub order: OrderPolicy,
    pub record_trace: bool,
    pub activations: Option<Activations<'a>>,
    /// Spread columns over the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl<'a> LayerQuantRequest<'a> {
    pub fn new(
        weights: ArrayView2<'a, f64>,
        stats: &'a CalibStats,
        grids: &'a [QuantGrid],
        method: Method,
    ) -> Self {
        Self {
            weights,
            stats,
            grids,
            damping: default_damping(method),
            method,
            order: OrderPolicy::Diag,
            record_trace: false,
            activations: None,
            parallel: true,
        }
    }

    pub fn with_damping(mut self, damping: DampingPolicy) -> Self {
        self.damping = damping;
        self
    }

    pub fn with_order(mut self, order: OrderPolicy) -> Self {
        self.order = order;
        self
    }

    pub fn with_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn with_activations(mut self, x: ArrayView2<'a, f64>, xt: ArrayView2<'a, f64>) -> Self {
        self.activations = Some(Activations { x, xt });
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

/// Damping each method uses unless told otherwise: 1 % of the mean diagonal for
/// OPTQ, `1e-6 * sigma_1` for Qronos, none for GPFQ and RTN.
pub fn default_damping(method: Method) -> DampingPolicy {
    match method {
        Method::Optq | Method::OptqRef => DampingPolicy::mean_diag(),
        Method::Qronos | Method::QronosBase => DampingPolicy::top_singular(1e-6),
        Method::Gpfq | Method::Rtn => DampingPolicy::none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveForm {
    /// `1/2 ||X w - Xt q||^2` from the raw activations.
    Activations,
    /// `1/2 (q^T H q - 2 q^T G w)` on the undamped statistics; differs from the
    /// activation form by the constant `1/2 ||X w||^2`.
    Quadratic,
    /// RTN without statistics.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub method: Method,
    pub damping: DampingPolicy,
    pub lambda: f64,
    /// 1-based original feature index processed at each position.
    pub order: Vec<usize>,
    pub objective_form: ObjectiveForm,
    pub objectives: Vec<f64>,
    pub total_objective: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LayerResult {
    /// Quantized weights in the caller's row order.
    pub q: Array2<f64>,
    pub report: LayerReport,
    /// Per-column traces in processing order (see `report.order`).
    pub traces: Option<Vec<RoundingTrace>>,
}

/// Elementwise RTN with one grid per column.
pub fn quantize_rtn_layer(weights: ArrayView2<'_, f64>, grids: &[QuantGrid]) -> Result<Array2<f64>> {
    check_grids(weights, grids)?;
    let mut q = weights.to_owned();
    for (mut col, grid) in q.columns_mut().into_iter().zip(grids) {
        col.mapv_inplace(|v| grid.quantize(v));
    }
    Ok(q)
}

fn check_grids(weights: ArrayView2<'_, f64>, grids: &[QuantGrid]) -> Result<()> {
    if grids.len() != weights.ncols() {
        return Err(Error::shape(format!(
            "{} grids for {} weight columns",
            grids.len(),
            weights.ncols()
        )));
    }
    Ok(())
}

/// Quantizes every column of `req.weights` with `req.method`.
///
/// Features are reordered (by default by descending `diag H`), `H` and `G` are
/// damped with the same `lambda`, the columns are processed independently, and
/// the result is returned in the caller's row order.
pub fn quantize_layer(req: &LayerQuantRequest<'_>) -> Result<LayerResult> {
    let w = req.weights;
    check_grids(w, req.grids)?;
    let n = w.nrows();
    if req.stats.dim() != n {
        return Err(Error::shape(format!(
            "weights have {} rows, statistics have dimension {}",
            n,
            req.stats.dim()
        )));
    }
    if let Some(act) = &req.activations {
        if act.x.dim() != act.xt.dim() || act.x.ncols() != n {
            return Err(Error::shape("activation matrices do not match the weights"));
        }
    }

    if req.method == Method::Rtn {
        let q = quantize_rtn_layer(w, req.grids)?;
        let (form, objectives) = objectives(req, q.view())?;
        let total = objectives.iter().sum();
        return Ok(LayerResult {
            q,
            report: LayerReport {
                method: req.method,
                damping: DampingPolicy::none(),
                lambda: 0.0,
                order: (1..=n).collect(),
                objective_form: form,
                objectives,
                total_objective: total,
                warnings: Vec::new(),
            },
            traces: None,
        });
    }

    let order = match req.order {
        OrderPolicy::Diag => ColumnOrder::by_diag(req.stats.h()),
        OrderPolicy::Natural => ColumnOrder::natural(n),
    };
    let permuted = req.stats.permuted(&order)?;
    let wp = order.permute_rows(w)?;
    let (hp, gp) = permuted.into_matrices();
    let (h, policy) = linalg::apply_damping(hp.view(), req.damping)?;
    let lambda = policy.resolved_lambda;
    let mut g = gp;
    if lambda > 0.0 {
        g.diag_mut().mapv_inplace(|d| d + lambda);
    }

    let traces = run_columns(req, wp.view(), h.view(), g.view())?;
    let mut qp = Array2::zeros(w.dim());
    let mut warnings = Vec::new();
    for (c, trace) in traces.iter().enumerate() {
        qp.column_mut(c).assign(&trace.q);
        warnings.extend(trace.warnings.iter().map(|msg| format!("column {}: {msg}", c + 1)));
    }
    let q = order.unpermute_rows(qp.view())?;
    let (form, objectives) = objectives(req, q.view())?;
    let total = objectives.iter().sum();

    let traces = if req.record_trace {
        Some(
            traces
                .into_iter()
                .zip(&objectives)
                .map(|(mut t, &obj)| {
                    t.objective = Some(obj);
                    t
                })
                .collect(),
        )
    } else {
        None
    };

    Ok(LayerResult {
        q,
        report: LayerReport {
            method: req.method,
            damping: policy,
            lambda,
            order: order.one_based(),
            objective_form: form,
            objectives,
            total_objective: total,
            warnings,
        },
        traces,
    })
}

fn run_columns(
    req: &LayerQuantRequest<'_>,
    wp: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
) -> Result<Vec<RoundingTrace>> {
    let record = req.record_trace;
    let grids = req.grids;
    let cols = wp.ncols();
    match req.method {
        Method::Rtn => unreachable!("handled by the caller"),
        Method::QronosBase => qronos_base_block(wp, h, g, grids, record),
        Method::Optq => {
            let kernel = inverse_kernel(h)?;
            Ok(map_columns(req.parallel, cols, |c| {
                Ok(optq_with_kernel(wp.column(c), &kernel, &grids[c], record))
            })?)
        }
        Method::Qronos => {
            let kernel = inverse_kernel(h)?;
            let gw = g.dot(&wp);
            map_columns(req.parallel, cols, |c| {
                Ok(qronos_with_kernel(
                    wp.column(c),
                    gw.column(c),
                    h,
                    &kernel,
                    &grids[c],
                    record,
                ))
            })
        }
        Method::OptqRef => {
            // R^T R = H, so least squares on R is least squares on the inputs.
            let r = linalg::cholesky_lower(h)?.into_inner().reversed_axes();
            map_columns(req.parallel, cols, |c| {
                quantize_optq_column_ref(wp.column(c), r.view(), 0.0, &grids[c], record)
            })
        }
        Method::Gpfq => map_columns(req.parallel, cols, |c| {
            quantize_gpfq_column_stats(wp.column(c), h, g, &grids[c], record)
        }),
    }
}

fn inverse_kernel(h: ArrayView2<'_, f64>) -> Result<DiffusionKernel> {
    let hinv = linalg::spd_inverse(h)?;
    DiffusionKernel::new(&linalg::cholesky_lower(hinv.view())?)
}

fn map_columns<F>(parallel: bool, cols: usize, f: F) -> Result<Vec<RoundingTrace>>
where
    F: Fn(usize) -> Result<RoundingTrace> + Sync,
{
    let results: Vec<Result<RoundingTrace>> = if parallel {
        (0..cols).into_par_iter().map(&f).collect()
    } else {
        (0..cols).map(&f).collect()
    };
    let mut out = Vec::with_capacity(cols);
    let mut failures = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.push(t),
            Err(e) => failures.push((c + 1, e)),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::Columns(failures))
    }
}

fn objectives(req: &LayerQuantRequest<'_>, q: ArrayView2<'_, f64>) -> Result<(ObjectiveForm, Vec<f64>)> {
    let w = req.weights;
    if let Some(act) = &req.activations {
        let resid = act.x.dot(&w) - act.xt.dot(&q);
        let obj = resid
            .axis_iter(Axis(1))
            .map(|c| 0.5 * c.dot(&c))
            .collect();
        return Ok((ObjectiveForm::Activations, obj));
    }
    if req.method == Method::Rtn && req.stats.n_samples() == 0 {
        return Ok((ObjectiveForm::None, vec![0.0; w.ncols()]));
    }
    let h = req.stats.h();
    let g = req.stats.g();
    let hq = h.dot(&q);
    let gw = g.dot(&w);
    let obj = (0..w.ncols())
        .map(|c| quadratic(q.column(c), hq.column(c), gw.column(c)))
        .collect();
    Ok((ObjectiveForm::Quadratic, obj))
}

fn quadratic(q: ArrayView1<'_, f64>, hq: ArrayView1<'_, f64>, gw: ArrayView1<'_, f64>) -> f64 {
    0.5 * q.dot(&hq) - q.dot(&gw)
}
