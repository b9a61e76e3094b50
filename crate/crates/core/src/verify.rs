//! Seeded property suites that check the equivalences between the rounding
//! formulations against the independent [`crate::oracle`] solvers.
//!
//! Instances cycle through `N` in `{4, 8, 16, 32}` and grids with
//! `{3, 4, 16}` levels, with `m = 8N` Gaussian calibration rows and, where the
//! inputs are mismatched, `Xt = X + 0.1 E` for independent Gaussian `E`.
//! Every suite is deterministic in `(seed, trial)`.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calib::CalibStats;
use crate::error::{Error, Result};
use crate::grid::{grid_from_minmax, GridConfig, QuantGrid};
use crate::linalg::{self, DampingPolicy};
use crate::oracle::{self, StepState};
use crate::rounding::{
    quantize_gpfq_column, quantize_layer, quantize_optq_column, quantize_qronos_base_column,
    quantize_qronos_column, LayerQuantRequest, Method, RoundingTrace,
};

pub const DIMENSIONS: [usize; 4] = [4, 8, 16, 32];
pub const LEVELS: [u32; 3] = [3, 4, 16];
/// Relative scale of the perturbation separating `Xt` from `X`.
pub const MISMATCH_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Suite {
    /// Base and efficient Qronos produce the same iterates.
    #[serde(rename = "theorem1")]
    Theorem1,
    /// Cholesky-form OPTQ equals OPTQ written as local least-squares corrections.
    #[serde(rename = "lemma1")]
    Lemma1,
    /// Cholesky-form OPTQ equals the greedy argmin / least-squares trajectory.
    #[serde(rename = "corollary1")]
    Corollary1,
    /// The `(H, G)` first step of Qronos equals its pseudoinverse form.
    #[serde(rename = "propE2")]
    PropE2,
    /// Rank-one inverse-Hessian updates and Cholesky column ratios.
    #[serde(rename = "lemmaC")]
    LemmaC,
    /// Qronos collapses to OPTQ when `Xt = X` under shared damping.
    #[serde(rename = "collapse")]
    Collapse,
    /// Base Qronos residuals are orthogonal to the unquantized columns.
    #[serde(rename = "orthogonality")]
    Orthogonality,
    /// Exhaustive search bounds every greedy method; every greedy step is an exact 1-D argmin.
    #[serde(rename = "oracle")]
    Oracle,
    /// Batched accumulation of `H` and `G` matches the monolithic products.
    #[serde(rename = "streaming")]
    Streaming,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Theorem1,
        Suite::Lemma1,
        Suite::Corollary1,
        Suite::PropE2,
        Suite::LemmaC,
        Suite::Collapse,
        Suite::Orthogonality,
        Suite::Oracle,
        Suite::Streaming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Lemma1 => "lemma1",
            Suite::Corollary1 => "corollary1",
            Suite::PropE2 => "propE2",
            Suite::LemmaC => "lemmaC",
            Suite::Collapse => "collapse",
            Suite::Orthogonality => "orthogonality",
            Suite::Oracle => "oracle",
            Suite::Streaming => "streaming",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Theorem1 | Suite::Lemma1 => 200,
            Suite::Orthogonality | Suite::Streaming => 50,
            Suite::Oracle => 500,
            _ => 100,
        }
    }

    pub fn default_tol(self) -> f64 {
        match self {
            Suite::Orthogonality => 1e-7,
            Suite::Streaming => 1e-12,
            _ => 1e-8,
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    /// A single name, a comma-separated list, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Suite>> {
        if s == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        s.split(',')
            .map(|name| {
                let name = name.trim();
                Suite::ALL
                    .into_iter()
                    .find(|x| x.name() == name)
                    .ok_or_else(|| Error::invalid(format!("unknown suite `{name}`")))
            })
            .collect()
    }

    fn stream_tag(self) -> u64 {
        Suite::ALL.iter().position(|&x| x == self).expect("listed") as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub trials: usize,
    pub passed: bool,
    pub tolerance: f64,
    /// Largest relative deviation observed in real-valued quantities.
    pub max_deviation: f64,
    /// Quantized entries (or greedy steps) that disagreed.
    pub q_mismatches: usize,
    /// Number of individual comparisons made.
    pub checks: usize,
    /// Trials with at least one violation.
    pub failed_trials: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<SuiteResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub suites: Vec<Suite>,
    /// Overrides every suite's default trial count.
    pub trials: Option<usize>,
    /// Overrides every suite's default tolerance.
    pub tol: Option<f64>,
    pub seed: u64,
}

impl VerifyConfig {
    pub fn new(suites: Vec<Suite>) -> Self {
        Self {
            suites,
            trials: None,
            tol: None,
            seed: 0,
        }
    }
}

pub fn run(config: &VerifyConfig) -> Result<VerifyReport> {
    let results = config
        .suites
        .iter()
        .map(|&suite| {
            let trials = config.trials.unwrap_or(suite.default_trials());
            let tol = config.tol.unwrap_or(suite.default_tol());
            run_suite(suite, trials, tol, config.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        seed: config.seed,
        passed: results.iter().all(|r| r.passed),
        results,
    })
}

/// One random layer instance for a suite.
#[derive(Debug, Clone)]
pub struct Instance {
    pub x: Array2<f64>,
    pub xt: Array2<f64>,
    pub w: Array1<f64>,
    pub grid: QuantGrid,
}

impl Instance {
    /// Instance `trial` of the standard family: `N = DIMENSIONS[trial % 4]`,
    /// `levels = LEVELS[(trial / 4) % 3]`, `m = 8N`.
    pub fn generate(rng: &mut ChaCha8Rng, trial: usize, noise: f64) -> Result<Self> {
        let n = DIMENSIONS[trial % DIMENSIONS.len()];
        let levels = LEVELS[(trial / DIMENSIONS.len()) % LEVELS.len()];
        Self::sized(rng, n, 8 * n, levels, noise)
    }

    pub fn sized(rng: &mut ChaCha8Rng, n: usize, m: usize, levels: u32, noise: f64) -> Result<Self> {
        let x = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
        let xt = if noise > 0.0 {
            let e = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
            &x + &(e * noise)
        } else {
            x.clone()
        };
        let w = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let grid = grid_from_minmax(w.view(), levels, 1.0)?;
        Ok(Self { x, xt, w, grid })
    }

    pub fn stats(&self) -> (Array2<f64>, Array2<f64>) {
        (self.xt.t().dot(&self.xt), self.xt.t().dot(&self.x))
    }
}

fn trial_rng(seed: u64, suite: Suite, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((suite.stream_tag() << 32) | trial as u64);
    rng
}

/// `||a - b||_inf / ||b||_inf`, or the absolute deviation when `b = 0`.
pub fn rel_dev(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        dev / scale
    } else {
        dev
    }
}

fn rel_dev_matrix(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        dev / scale
    } else {
        dev
    }
}

fn factor_of_inverse(h: &Array2<f64>) -> Result<linalg::CholeskyFactor> {
    let hinv = linalg::spd_inverse(h.view())?;
    Ok(linalg::cholesky_lower(hinv.view())?)
}

#[derive(Default)]
struct Tally {
    max_dev: f64,
    mismatches: usize,
    checks: usize,
    failed: usize,
}

impl Tally {
    /// Compares two trajectories; returns whether the trial passed.
    fn trajectories(&mut self, a: &[Array1<f64>], b: &[Array1<f64>], tol: f64) -> bool {
        let mut ok = a.len() == b.len();
        for (sa, sb) in a.iter().zip(b) {
            let d = rel_dev(sa.view(), sb.view());
            self.max_dev = self.max_dev.max(d);
            self.checks += 1;
            ok &= d <= tol;
        }
        ok
    }

    fn q(&mut self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> bool {
        let bad = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count();
        self.mismatches += bad;
        self.checks += a.len();
        bad == 0 && a.len() == b.len()
    }

    fn dev(&mut self, d: f64, tol: f64) -> bool {
        self.max_dev = self.max_dev.max(d);
        self.checks += 1;
        d <= tol
    }

    fn finish(self, suite: Suite, trials: usize, tol: f64) -> SuiteResult {
        SuiteResult {
            suite,
            trials,
            passed: self.failed == 0 && self.mismatches == 0,
            tolerance: tol,
            max_deviation: self.max_dev,
            q_mismatches: self.mismatches,
            checks: self.checks,
            failed_trials: self.failed,
            note: (trials == 0).then(|| "0 trials: vacuous pass".to_string()),
        }
    }
}

pub fn run_suite(suite: Suite, trials: usize, tol: f64, seed: u64) -> Result<SuiteResult> {
    let mut tally = Tally::default();
    for trial in 0..trials {
        let mut rng = trial_rng(seed, suite, trial);
        let ok = match suite {
            Suite::Theorem1 => theorem1_trial(&mut rng, trial, tol, &mut tally)?,
            Suite::Lemma1 => lemma1_trial(&mut rng, trial, tol, &mut tally)?,
            Suite::Corollary1 => corollary1_trial(&mut rng, trial, tol, &mut tally)?,
            Suite::PropE2 => prop_e2_trial(&mut rng, trial, tol, &mut tally)?,
            Suite::LemmaC => lemma_c_trial(&mut rng, trial, tol, &mut tally)?,
            Suite::Collapse => collapse_trial(&mut rng, trial, &mut tally)?,
            Suite::Orthogonality => orthogonality_trial(&mut rng, trial, tol, &mut tally)?,
            Suite::Oracle => oracle_trial(&mut rng, &mut tally)?,
            Suite::Streaming => streaming_trial(&mut rng, tol, &mut tally)?,
        };
        if !ok {
            tally.failed += 1;
        }
    }
    Ok(tally.finish(suite, trials, tol))
}

fn states(trace: &RoundingTrace) -> &[Array1<f64>] {
    trace.w_states.as_deref().expect("trace recorded")
}

fn theorem1_trial(rng: &mut ChaCha8Rng, trial: usize, tol: f64, tally: &mut Tally) -> Result<bool> {
    let inst = Instance::generate(rng, trial, MISMATCH_NOISE)?;
    let (h, g) = inst.stats();
    let base = quantize_qronos_base_column(inst.w.view(), h.view(), g.view(), &inst.grid, true)?;
    let fast = quantize_qronos_column(
        inst.w.view(),
        h.view(),
        g.view(),
        &factor_of_inverse(&h)?,
        &inst.grid,
        true,
    )?;
    let q_ok = tally.q(fast.q.view(), base.q.view());
    let w_ok = tally.trajectories(states(&fast), states(&base), tol);
    Ok(q_ok && w_ok)
}

fn lemma1_trial(rng: &mut ChaCha8Rng, trial: usize, tol: f64, tally: &mut Tally) -> Result<bool> {
    let inst = Instance::generate(rng, trial, 0.0)?;
    let (h, _) = inst.stats();
    let chol = quantize_optq_column(inst.w.view(), &factor_of_inverse(&h)?, &inst.grid, true)?;
    let local = oracle::optq_local_trajectory(inst.w.view(), inst.x.view(), &inst.grid)?;
    let q_ok = tally.q(chol.q.view(), local.last().expect("N + 1 states").view());
    let w_ok = tally.trajectories(states(&chol), &local, tol);
    Ok(q_ok && w_ok)
}

fn corollary1_trial(rng: &mut ChaCha8Rng, trial: usize, tol: f64, tally: &mut Tally) -> Result<bool> {
    let inst = Instance::generate(rng, trial, 0.0)?;
    let (h, _) = inst.stats();
    let chol = quantize_optq_column(inst.w.view(), &factor_of_inverse(&h)?, &inst.grid, true)?;
    let argmin = oracle::residual_trajectory(inst.w.view(), inst.x.view(), inst.x.view(), &inst.grid)?;
    let q_ok = tally.q(chol.q.view(), argmin.last().expect("N + 1 states").view());
    let w_ok = tally.trajectories(states(&chol), &argmin, tol);
    Ok(q_ok && w_ok)
}

fn prop_e2_trial(rng: &mut ChaCha8Rng, trial: usize, tol: f64, tally: &mut Tally) -> Result<bool> {
    let inst = Instance::generate(rng, trial, MISMATCH_NOISE)?;
    let (h, g) = inst.stats();
    let fast = quantize_qronos_column(
        inst.w.view(),
        h.view(),
        g.view(),
        &factor_of_inverse(&h)?,
        &inst.grid,
        true,
    )?;
    let (q1, w1) = oracle::first_step_pinv(inst.w.view(), inst.x.view(), inst.xt.view(), &inst.grid)?;
    let after = &states(&fast)[1];
    let q_ok = tally.q(after.slice(s![..1]), Array1::from(vec![q1]).view());
    let w_ok = tally.dev(rel_dev(after.slice(s![1..]), w1.view()), tol);
    Ok(q_ok && w_ok)
}

fn lemma_c_trial(rng: &mut ChaCha8Rng, trial: usize, tol: f64, tally: &mut Tally) -> Result<bool> {
    let n = DIMENSIONS[trial % DIMENSIONS.len()];
    let x = Array2::from_shape_fn((8 * n, n), |_| rng.sample::<f64, _>(StandardNormal));
    let h = x.t().dot(&x);
    let hinv = linalg::spd_inverse(h.view())?;
    let l = linalg::cholesky_lower(hinv.view())?;
    let l = l.l();
    let mut ok = true;
    let mut chain = hinv.clone();
    for t in 0..n {
        let direct = oracle::direct_inverse(h.slice(s![t.., t..]))?;
        if t > 0 {
            chain = linalg::inverse_hessian_step(chain.view())?;
            let d = rel_dev_matrix(&chain, &direct);
            ok &= tally.dev(d, tol);
        }
        if t + 1 < n {
            let ratio_direct = direct.slice(s![1.., 0]).mapv(|v| v / direct[[0, 0]]);
            let ratio_chol = l.slice(s![t + 1.., t]).mapv(|v| v / l[[t, t]]);
            ok &= tally.dev(rel_dev(ratio_chol.view(), ratio_direct.view()), tol);
        }
    }
    Ok(ok)
}

fn collapse_trial(rng: &mut ChaCha8Rng, trial: usize, tally: &mut Tally) -> Result<bool> {
    let n = DIMENSIONS[trial % DIMENSIONS.len()];
    let levels = LEVELS[(trial / DIMENSIONS.len()) % LEVELS.len()];
    let x = Array2::from_shape_fn((8 * n, n), |_| rng.sample::<f64, _>(StandardNormal));
    let w = Array2::from_shape_fn((n, 4), |_| rng.sample::<f64, _>(StandardNormal));
    let grids = GridConfig::minmax(levels, 1.0).per_channel(w.view())?;
    let stats = CalibStats::from_activations(x.view(), x.view())?;
    let damping = DampingPolicy::mean_diag();
    let run = |method| {
        quantize_layer(&LayerQuantRequest::new(w.view(), &stats, &grids, method).with_damping(damping))
    };
    let a = run(Method::Qronos)?;
    let b = run(Method::Optq)?;
    let bad = a.q.iter().zip(b.q.iter()).filter(|(x, y)| x != y).count();
    tally.mismatches += bad;
    tally.checks += a.q.len();
    Ok(bad == 0)
}

fn orthogonality_trial(rng: &mut ChaCha8Rng, trial: usize, tol: f64, tally: &mut Tally) -> Result<bool> {
    let inst = Instance::generate(rng, trial, MISMATCH_NOISE)?;
    let (h, g) = inst.stats();
    let base = quantize_qronos_base_column(inst.w.view(), h.view(), g.view(), &inst.grid, true)?;
    let target = inst.x.dot(&inst.w);
    let n = inst.w.len();
    let norms: Vec<f64> = (0..n).map(|j| inst.xt.column(j).dot(&inst.xt.column(j)).sqrt()).collect();
    let mut ok = true;
    for (t, state) in states(&base).iter().enumerate().skip(1) {
        let r = &target - &inst.xt.dot(state);
        let rn = r.dot(&r).sqrt();
        if rn == 0.0 {
            continue;
        }
        // `t` entries are fixed after step t; columns t.. are still free
        for j in t..n {
            let c = (r.dot(&inst.xt.column(j)) / (rn * norms[j])).abs();
            ok &= tally.dev(c, tol);
        }
    }
    Ok(ok)
}

const ORACLE_N: usize = 4;
const ORACLE_LEVELS: u32 = 4;

fn oracle_trial(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<bool> {
    let inst = Instance::sized(rng, ORACLE_N, 8 * ORACLE_N, ORACLE_LEVELS, MISMATCH_NOISE)?;
    let (h, g) = inst.stats();
    let w = inst.w.view();
    let (x, xt) = (inst.x.view(), inst.xt.view());
    let (_, best) = oracle::brute_force_ils(w, x, xt, &inst.grid, oracle::DEFAULT_ENUMERATION_CAP)?;

    // OPTQ only sees Xt: its steps minimize ||Xt w - Xt q||.
    let optq = quantize_optq_column(w, &factor_of_inverse(&h)?, &inst.grid, true)?;
    let qronos = quantize_qronos_column(w, h.view(), g.view(), &factor_of_inverse(&h)?, &inst.grid, true)?;
    let base = quantize_qronos_base_column(w, h.view(), g.view(), &inst.grid, true)?;
    let gpfq = quantize_gpfq_column(w, x, xt, &inst.grid, true)?;

    let mut ok = true;
    for trace in [&optq, &qronos, &base, &gpfq] {
        let obj = oracle::objective(w, x, xt, trace.q.view());
        let slack = oracle::TIE_TOLERANCE * best.abs().max(1.0);
        tally.checks += 1;
        if obj < best - slack {
            ok = false;
        }
    }
    let mut step = |trace: &RoundingTrace, kind: &str| -> Result<()> {
        let st = states(trace);
        for t in 0..ORACLE_N {
            let chosen = trace.q[t];
            let expect = match kind {
                "optq" => oracle::stepwise_argmin_oracle(
                    &StepState::Residual { w, state: st[t].view() },
                    xt,
                    xt,
                    &inst.grid,
                    t,
                )?,
                "gpfq" => oracle::stepwise_argmin_oracle(
                    &StepState::PathPrefix {
                        w,
                        q_prefix: trace.q.view(),
                    },
                    x,
                    xt,
                    &inst.grid,
                    t,
                )?,
                _ => oracle::stepwise_argmin_oracle(
                    &StepState::Residual { w, state: st[t].view() },
                    x,
                    xt,
                    &inst.grid,
                    t,
                )?,
            };
            tally.checks += 1;
            if chosen != expect {
                tally.mismatches += 1;
                ok = false;
            }
        }
        Ok(())
    };
    step(&optq, "optq")?;
    step(&qronos, "qronos")?;
    step(&base, "qronos")?;
    step(&gpfq, "gpfq")?;
    Ok(ok)
}

fn streaming_trial(rng: &mut ChaCha8Rng, tol: f64, tally: &mut Tally) -> Result<bool> {
    let n = rng.random_range(2..=24usize);
    let m = rng.random_range(16..=256usize);
    let x = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let e = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let xt = &x + &(e * MISMATCH_NOISE);
    let mut cuts: Vec<usize> = (0..rng.random_range(1..=8usize)).map(|_| rng.random_range(0..=m)).collect();
    cuts.push(0);
    cuts.push(m);
    cuts.sort_unstable();
    let mut stats = CalibStats::new(n);
    for pair in cuts.windows(2) {
        stats.accumulate(x.slice(s![pair[0]..pair[1], ..]), xt.slice(s![pair[0]..pair[1], ..]))?;
    }
    let h = xt.t().dot(&xt);
    let g = xt.t().dot(&x);
    let dh = linalg::frobenius((&stats.h() - &h).view()) / linalg::frobenius(h.view());
    let dg = linalg::frobenius((&stats.g() - &g).view()) / linalg::frobenius(g.view());
    let ok_n = stats.n_samples() == m;
    Ok(tally.dev(dh, tol) & tally.dev(dg, tol) && ok_n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_a_marked_vacuous_pass() {
        let r = run_suite(Suite::Theorem1, 0, 1e-8, 0).unwrap();
        assert!(r.passed);
        assert_eq!(r.note.as_deref(), Some("0 trials: vacuous pass"));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse_list(s.name()).unwrap(), vec![s]);
            assert_eq!(serde_json::to_value(s).unwrap(), s.name());
        }
        assert_eq!(Suite::parse_list("all").unwrap().len(), Suite::ALL.len());
        assert!(Suite::parse_list("nope").is_err());
        assert_eq!(Suite::parse_list("oracle,theorem1").unwrap(), vec![Suite::Oracle, Suite::Theorem1]);
        assert!(Suite::parse_list("oracle,nope").is_err());
    }

    #[test]
    fn short_runs_pass() {
        for s in Suite::ALL {
            let r = run_suite(s, 8, s.default_tol(), 1).unwrap();
            assert!(r.passed, "{s:?}: {r:?}");
            assert!(r.checks > 0);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_suite(Suite::Theorem1, 6, 1e-8, 3).unwrap();
        let b = run_suite(Suite::Theorem1, 6, 1e-8, 3).unwrap();
        assert_eq!(a, b);
    }
}
