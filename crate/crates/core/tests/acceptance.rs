//! Acceptance criteria, one verdict line each.
//!
//! Runs under `cargo test --workspace` (or `cargo test --test acceptance`).
//! Exits non-zero if any criterion fails; all criteria run regardless.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use qronos::bench::{self, BenchConfig};
use qronos::netsim::{run_simulation, SimulationConfig};
use qronos::qmx::{read_qmx, write_qmx, Dtype};
use qronos::verify::{run_suite, Suite};
use qronos::Method;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

const SEED: u64 = 20_240_601;

struct Verdict {
    passed: bool,
    detail: String,
}

fn suite_criterion(suite: Suite, trials: usize, tol: f64) -> Verdict {
    match run_suite(suite, trials, tol, SEED) {
        Ok(r) => Verdict {
            passed: r.passed && r.trials == trials && r.q_mismatches == 0 && r.failed_trials == 0,
            detail: format!(
                "{}: {} trials, {} checks, q mismatches {}, max deviation {:.2e} (tol {:.0e})",
                suite.name(),
                r.trials,
                r.checks,
                r.q_mismatches,
                r.max_deviation,
                tol
            ),
        },
        Err(e) => Verdict {
            passed: false,
            detail: format!("{}: error {e}", suite.name()),
        },
    }
}

fn error_correction() -> Verdict {
    let mut config = SimulationConfig::new(4, 64, 3);
    config.methods = vec![Method::Optq, Method::Gpfq, Method::Qronos];
    config.seeds = (0..10).collect();
    let report = match run_simulation(&config) {
        Ok(r) => r,
        Err(e) => return Verdict { passed: false, detail: format!("error {e}") },
    };
    let final_error = |m: Method| {
        report
            .summary
            .iter()
            .find(|s| s.method == m)
            .map_or(f64::NAN, |s| s.mean_final_error)
    };
    let (q, o, g) = (final_error(Method::Qronos), final_error(Method::Optq), final_error(Method::Gpfq));
    Verdict {
        passed: q <= o && q <= g,
        detail: format!(
            "mean final-layer error qronos {q:.4}, optq {o:.4}, gpfq {g:.4} (improvement {:.0}% / {:.0}%)",
            100.0 * (1.0 - q / o),
            100.0 * (1.0 - q / g)
        ),
    }
}

fn runtime_scaling() -> Verdict {
    let config = BenchConfig {
        k_min: 32,
        k_max: 512,
        m: 2000,
        seeds: vec![0, 1, 2],
        methods: vec![Method::Optq, Method::QronosBase, Method::Qronos],
        ..BenchConfig::default()
    };
    let report = match bench::run(&config) {
        Ok(r) => r,
        Err(e) => return Verdict { passed: false, detail: format!("error {e}") },
    };
    let mut passed = report.speedups.len() == 5;
    for s in &report.speedups {
        if s.k >= 128 && s.per_seed.iter().any(|&x| x <= 1.0) {
            passed = false;
        }
    }
    let medians: Vec<f64> = report.speedups.iter().map(|s| s.median).collect();
    if medians.windows(2).any(|w| w[1] < w[0]) {
        passed = false;
    }
    let last = medians.last().copied().unwrap_or(0.0);
    if last < 3.0 {
        passed = false;
    }
    let ladder: Vec<String> = report
        .speedups
        .iter()
        .map(|s| format!("K={}:{:.1}x", s.k, s.median))
        .collect();
    Verdict {
        passed,
        detail: format!("median base/efficient speedup {}", ladder.join(" ")),
    }
}

fn cli_json(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qronos"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}", out.status.code()));
    }
    let mut v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    if let Value::Object(map) = &mut v {
        map.remove("timing");
    }
    Ok(v)
}

fn same_bits(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn determinism_and_format(dir: &Path) -> Result<String, String> {
    let runs: [&[&str]; 3] = [
        &["verify", "--suite", "theorem1,oracle", "--trials", "25", "--seed", "9"],
        &["simulate", "--layers", "3", "--width", "16", "--seeds", "3", "--seed", "4"],
        &["bench", "--k-min", "8", "--k-max", "16", "--m", "64", "--seeds", "2", "--reps", "1"],
    ];
    for args in runs {
        let a = serde_json::to_vec(&cli_json(args)?).map_err(|e| e.to_string())?;
        let b = serde_json::to_vec(&cli_json(args)?).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{} report differs between identical runs", args[0]));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let m = Array2::from_shape_fn((37, 11), |_| rng.sample::<f64, _>(StandardNormal) * 1e3);
    let p64 = dir.join("m64.qmx");
    write_qmx(&p64, m.view(), Dtype::F64).map_err(|e| e.to_string())?;
    let (back, dtype) = read_qmx(&p64).map_err(|e| e.to_string())?;
    if dtype != Dtype::F64 || !same_bits(&m, &back) {
        return Err("f64 round trip not bit-exact".into());
    }
    let m32 = m.mapv(|v| f64::from(v as f32));
    let p32 = dir.join("m32.qmx");
    write_qmx(&p32, m32.view(), Dtype::F32).map_err(|e| e.to_string())?;
    let (back, dtype) = read_qmx(&p32).map_err(|e| e.to_string())?;
    if dtype != Dtype::F32 || !same_bits(&m32, &back) {
        return Err("f32 round trip not bit-exact".into());
    }

    // quantize twice through the CLI: identical files and reports
    let x = Array2::from_shape_fn((64, 8), |_| rng.sample::<f64, _>(StandardNormal));
    let xt = x.mapv(|v| (v * 4.0).round() / 4.0);
    let w = Array2::from_shape_fn((8, 3), |_| rng.sample::<f64, _>(StandardNormal));
    for (name, a) in [("x", &x), ("xt", &xt), ("w", &w)] {
        write_qmx(dir.join(format!("{name}.qmx")), a.view(), Dtype::F64).map_err(|e| e.to_string())?;
    }
    let path = |n: &str| dir.join(n).display().to_string();
    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    let out = path("q.qmx");
    for _ in 0..2 {
        let report = cli_json(&[
            "quantize", "--weights", &path("w.qmx"), "--calib-x", &path("x.qmx"), "--calib-xt", &path("xt.qmx"),
            "--method", "qronos", "--bits", "3", "--out", &out,
        ])?;
        reports.push(serde_json::to_vec(&report).map_err(|e| e.to_string())?);
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    if reports[0] != reports[1] || outputs[0] != outputs[1] {
        return Err("quantize output differs between identical runs".into());
    }
    Ok("verify, simulate, bench and quantize reports identical modulo timing; qmx f64/f32 bit-exact".into())
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    type Check<'a> = (usize, Duration, Box<dyn Fn() -> Verdict + 'a>);
    let secs = Duration::from_secs;
    let criteria: Vec<Check> = vec![
        (1, secs(60), Box::new(|| suite_criterion(Suite::Theorem1, 200, 1e-8))),
        (2, secs(60), Box::new(|| suite_criterion(Suite::Lemma1, 200, 1e-8))),
        (3, secs(30), Box::new(|| suite_criterion(Suite::Corollary1, 100, 1e-8))),
        (4, secs(30), Box::new(|| suite_criterion(Suite::PropE2, 100, 1e-8))),
        (5, secs(30), Box::new(|| suite_criterion(Suite::LemmaC, 100, 1e-8))),
        (6, secs(30), Box::new(|| suite_criterion(Suite::Collapse, 100, 1e-8))),
        (7, secs(30), Box::new(|| suite_criterion(Suite::Orthogonality, 50, 1e-7))),
        (8, secs(120), Box::new(|| suite_criterion(Suite::Oracle, 500, 1e-8))),
        (9, secs(300), Box::new(error_correction)),
        (10, secs(600), Box::new(runtime_scaling)),
        (11, secs(10), Box::new(|| suite_criterion(Suite::Streaming, 50, 1e-12))),
        (
            12,
            secs(120),
            Box::new(|| match determinism_and_format(dir.path()) {
                Ok(detail) => Verdict { passed: true, detail },
                Err(detail) => Verdict { passed: false, detail },
            }),
        ),
    ];

    let mut failures = 0;
    for (n, budget, check) in criteria {
        let start = Instant::now();
        let mut verdict = check();
        let elapsed = start.elapsed();
        if elapsed > budget {
            verdict.passed = false;
            verdict.detail.push_str(&format!("; over time budget {budget:?}"));
        }
        if !verdict.passed {
            failures += 1;
        }
        println!(
            "{} criterion {n}: {} [{:.1}s]",
            if verdict.passed { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
