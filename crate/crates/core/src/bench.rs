//! Runtime scaling of the rounding methods on synthetic layers.
//!
//! For each `K` on a doubling ladder a layer with `K` inputs and `K / 4` outputs
//! is quantized from `m` Gaussian calibration rows. Two phases are timed:
//! the algorithm alone (statistics precomputed) and end to end (including the
//! accumulation of `H` and `G`). Cells run serially on one thread.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::calib::CalibStats;
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::qmx::Dtype;
use crate::rounding::{quantize_layer, LayerQuantRequest, Method};
use crate::verify::MISMATCH_NOISE;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub m: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Storage precision of the generated calibration data; arithmetic is always `f64`.
    pub dtype: Dtype,
    pub levels: u32,
    /// Timed repetitions per cell; the minimum and mean are reported.
    pub repetitions: usize,
    /// Runs shorter than this are batched so the clock resolution does not dominate.
    pub min_sample_seconds: f64,
    /// `qronos-base` is skipped (recorded as a resource skip) above this `K`.
    pub base_k_max: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k_min: 32,
            k_max: 1024,
            m: 10_000,
            seeds: vec![0, 1, 2],
            methods: vec![Method::Optq, Method::Gpfq, Method::QronosBase, Method::Qronos],
            dtype: Dtype::F64,
            levels: 4,
            repetitions: 3,
            min_sample_seconds: 0.02,
            base_k_max: 1024,
        }
    }
}

impl BenchConfig {
    /// `k_min, 2 k_min, ...` up to and including `k_max`.
    pub fn ladder(&self) -> Result<Vec<usize>> {
        if self.k_min < 4 || self.k_min > self.k_max {
            return Err(Error::invalid(format!(
                "invalid K range {}..{} (need 4 <= k_min <= k_max)",
                self.k_min, self.k_max
            )));
        }
        let mut ks = Vec::new();
        let mut k = self.k_min;
        while k <= self.k_max {
            ks.push(k);
            k *= 2;
        }
        Ok(ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub min_seconds: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCell {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub status: String,
    pub algorithm: Option<Timing>,
    pub end_to_end: Option<Timing>,
    /// Algorithm time over the OPTQ baseline at the smallest `K` (seed mean).
    pub normalized_algorithm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Speedup {
    pub k: usize,
    /// Per-seed `qronos-base / qronos` algorithm time.
    pub per_seed: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub machine: Machine,
    pub baseline_seconds: Option<f64>,
    pub cells: Vec<BenchCell>,
    pub speedups: Vec<Speedup>,
}

impl BenchReport {
    pub fn cell(&self, method: Method, k: usize, seed: u64) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.k == k && c.seed == seed)
    }
}

/// Calibration data and weights for one `(K, seed)` cell.
pub struct BenchLayer {
    pub x: Array2<f64>,
    pub xt: Array2<f64>,
    pub w: Array2<f64>,
}

pub fn bench_layer(k: usize, m: usize, seed: u64, dtype: Dtype) -> BenchLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k as u64);
    let round = |v: f64| match dtype {
        Dtype::F64 => v,
        Dtype::F32 => f64::from(v as f32),
    };
    let x = Array2::from_shape_fn((m, k), |_| round(rng.sample(StandardNormal)));
    let xt = Array2::from_shape_fn((m, k), |(i, j)| {
        round(x[[i, j]] + MISMATCH_NOISE * rng.sample::<f64, _>(StandardNormal))
    });
    let w = Array2::from_shape_fn((k, (k / 4).max(1)), |_| round(rng.sample(StandardNormal)));
    BenchLayer { x, xt, w }
}

fn time_it<F: FnMut() -> Result<()>>(mut f: F, reps: usize, min_sample: f64) -> Result<Timing> {
    let start = Instant::now();
    f()?;
    let first = start.elapsed().as_secs_f64();
    let inner = if first >= min_sample || first <= 0.0 {
        1
    } else {
        ((min_sample / first).ceil() as usize).clamp(1, 10_000)
    };
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    // never report zero: clock ticks are at least a nanosecond
    let floor = Duration::from_nanos(1).as_secs_f64();
    Ok(Timing {
        min_seconds: min.max(floor),
        mean_seconds: mean.max(floor),
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run(config: &BenchConfig) -> Result<BenchReport> {
    let ladder = config.ladder()?;
    if config.m == 0 || config.seeds.is_empty() || config.methods.is_empty() {
        return Err(Error::invalid("m, seeds and methods must be non-empty"));
    }
    let grid_cfg = GridConfig::minmax(config.levels, 1.0);
    let mut cells = Vec::new();
    for &k in &ladder {
        for &seed in &config.seeds {
            let layer = bench_layer(k, config.m, seed, config.dtype);
            let grids = grid_cfg.per_channel(layer.w.view())?;
            let stats = CalibStats::from_activations(layer.x.view(), layer.xt.view())?;
            for &method in &config.methods {
                if method == Method::QronosBase && k > config.base_k_max {
                    cells.push(BenchCell {
                        method,
                        k,
                        seed,
                        status: "skipped: resource".into(),
                        algorithm: None,
                        end_to_end: None,
                        normalized_algorithm: None,
                    });
                    continue;
                }
                let algorithm = time_it(
                    || {
                        let req = LayerQuantRequest::new(layer.w.view(), &stats, &grids, method)
                            .with_parallel(false);
                        quantize_layer(&req).map(|_| ())
                    },
                    config.repetitions,
                    config.min_sample_seconds,
                )?;
                let end_to_end = time_it(
                    || {
                        let stats = CalibStats::from_activations(layer.x.view(), layer.xt.view())?;
                        let req = LayerQuantRequest::new(layer.w.view(), &stats, &grids, method)
                            .with_parallel(false);
                        quantize_layer(&req).map(|_| ())
                    },
                    config.repetitions,
                    config.min_sample_seconds,
                )?;
                cells.push(BenchCell {
                    method,
                    k,
                    seed,
                    status: "ok".into(),
                    algorithm: Some(algorithm),
                    end_to_end: Some(end_to_end),
                    normalized_algorithm: None,
                });
            }
        }
    }

    let baseline: Vec<f64> = cells
        .iter()
        .filter(|c| c.method == Method::Optq && c.k == ladder[0])
        .filter_map(|c| c.algorithm.as_ref().map(|t| t.min_seconds))
        .collect();
    let baseline_seconds =
        (!baseline.is_empty()).then(|| baseline.iter().sum::<f64>() / baseline.len() as f64);
    if let Some(b) = baseline_seconds {
        for c in &mut cells {
            c.normalized_algorithm = c.algorithm.as_ref().map(|t| t.min_seconds / b);
        }
    }

    let mut speedups = Vec::new();
    if config.methods.contains(&Method::Qronos) && config.methods.contains(&Method::QronosBase) {
        for &k in &ladder {
            let mut per_seed = Vec::new();
            for &seed in &config.seeds {
                let find = |m| {
                    cells
                        .iter()
                        .find(|c: &&BenchCell| c.method == m && c.k == k && c.seed == seed)
                        .and_then(|c| c.algorithm.as_ref())
                        .map(|t| t.min_seconds)
                };
                if let (Some(base), Some(fast)) = (find(Method::QronosBase), find(Method::Qronos)) {
                    per_seed.push(base / fast);
                }
            }
            if !per_seed.is_empty() {
                let med = median(&mut per_seed.clone());
                speedups.push(Speedup {
                    k,
                    per_seed,
                    median: med,
                });
            }
        }
    }

    Ok(BenchReport {
        config: config.clone(),
        machine: Machine {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
        baseline_seconds,
        cells,
        speedups,
    })
}
