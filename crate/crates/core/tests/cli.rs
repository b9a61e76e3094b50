//! End-to-end runs of the `qronos` binary on `.qmx` files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use qronos::qmx::{read_qmx, write_qmx, Dtype};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use tempfile::TempDir;

fn qronos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qronos")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write(&self, name: &str, m: &Array2<f64>) -> String {
        write_qmx(self.path(name), m.view(), Dtype::F64).unwrap();
        self.arg(name)
    }

    /// X, a mismatched Xt and weights for an `n`-input, 4-output layer.
    fn layer(&self, seed: u64, n: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((8 * n, n), |_| rng.sample::<f64, _>(StandardNormal));
        let xt = x.mapv(|v| (v * 3.0).round() / 3.0);
        let w = Array2::from_shape_fn((n, 4), |_| rng.sample::<f64, _>(StandardNormal));
        self.write("x.qmx", &x);
        self.write("xt.qmx", &xt);
        self.write("w.qmx", &w);
    }
}

fn read(p: &Path) -> Array2<f64> {
    read_qmx(p).unwrap().0
}

#[test]
fn rtn_on_grid_weights_reproduces_the_file() {
    let f = Fixture::new();
    // every column spans 0..=3 so the 4-level min-max grid is the integers
    let w = Array2::from_shape_fn((6, 3), |(i, j)| ((i + j) % 4) as f64);
    let wp = f.write("w.qmx", &w);
    let out = qronos(&["quantize", "--weights", &wp, "--method", "rtn", "--bits", "2", "--out", &f.arg("q.qmx")]);
    json(&out);
    assert_eq!(std::fs::read(f.path("q.qmx")).unwrap(), std::fs::read(f.path("w.qmx")).unwrap());
}

#[test]
fn qronos_collapses_to_optq_without_mismatch() {
    let f = Fixture::new();
    f.layer(1, 12);
    let (x, w) = (f.arg("x.qmx"), f.arg("w.qmx"));
    for method in ["optq", "qronos"] {
        let out = qronos(&[
            "quantize", "--weights", &w, "--calib-x", &x, "--calib-xt", &x, "--method", method, "--bits", "3",
            "--damping", "meandiag", "--out", &f.arg(&format!("{method}.qmx")),
        ]);
        json(&out);
    }
    assert_eq!(read(&f.path("optq.qmx")), read(&f.path("qronos.qmx")));
}

#[test]
fn qronos_needs_mismatched_inputs() {
    let f = Fixture::new();
    f.layer(2, 8);
    let out = qronos(&[
        "quantize", "--weights", &f.arg("w.qmx"), "--calib-x", &f.arg("x.qmx"), "--method", "qronos", "--out",
        &f.arg("q.qmx"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!f.path("q.qmx").exists());
}

#[test]
fn stats_files_and_activations_give_the_same_weights() {
    let f = Fixture::new();
    f.layer(3, 16);
    let (x, xt, w) = (f.arg("x.qmx"), f.arg("xt.qmx"), f.arg("w.qmx"));
    let out = qronos(&["stats", "--calib-x", &x, "--calib-xt", &xt, "--out-h", &f.arg("h.qmx"), "--out-g", &f.arg("g.qmx"), "--batch", "7"]);
    assert!(out.status.success());
    for method in ["optq", "gpfq", "qronos-base", "qronos"] {
        let a = f.arg("a.qmx");
        let b = f.arg("b.qmx");
        json(&qronos(&["quantize", "--weights", &w, "--calib-x", &x, "--calib-xt", &xt, "--method", method, "--bits", "3", "--out", &a]));
        json(&qronos(&[
            "quantize", "--weights", &w, "--stats-h", &f.arg("h.qmx"), "--stats-g", &f.arg("g.qmx"), "--method", method,
            "--bits", "3", "--out", &b,
        ]));
        assert_eq!(read(&f.path("a.qmx")), read(&f.path("b.qmx")), "{method}");
    }
}

#[test]
fn report_carries_schema_and_one_based_order() {
    let f = Fixture::new();
    f.layer(4, 8);
    let report = json(&qronos(&[
        "quantize", "--weights", &f.arg("w.qmx"), "--calib-x", &f.arg("x.qmx"), "--calib-xt", &f.arg("xt.qmx"),
        "--method", "qronos", "--bits", "1.58", "--out", &f.arg("q.qmx"),
    ]));
    assert_eq!(report["schema"], 1);
    let mut order: Vec<u64> = report["result"]["order"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    order.sort_unstable();
    assert_eq!(order, (1..=8).collect::<Vec<u64>>());
    assert!(report["timing"]["total_seconds"].is_number());
    let q = read(&f.path("q.qmx"));
    for c in 0..4 {
        let mut vals: Vec<f64> = q.column(c).to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert!(vals.len() <= 3);
    }
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let f = Fixture::new();
    f.layer(5, 8);
    std::fs::write(f.path("junk.qmx"), b"not a matrix").unwrap();
    let junk = qronos(&["quantize", "--weights", &f.arg("junk.qmx"), "--method", "rtn", "--out", &f.arg("q.qmx")]);
    assert_eq!(junk.status.code(), Some(3));
    let wide = Array2::<f64>::zeros((10, 5));
    let wp = f.write("wide.qmx", &wide);
    let shape = qronos(&["quantize", "--weights", &wp, "--calib-x", &f.arg("x.qmx"), "--method", "optq", "--out", &f.arg("q.qmx")]);
    assert_eq!(shape.status.code(), Some(4));
    assert_eq!(qronos(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn zero_trials_is_a_vacuous_pass() {
    let report = json(&qronos(&["verify", "--suite", "theorem1", "--trials", "0"]));
    assert_eq!(report["passed"], true);
    assert_eq!(report["results"][0]["note"], "0 trials: vacuous pass");
}

#[test]
fn verify_failure_exits_six() {
    // rounding noise in the diffused weights exceeds a zero tolerance
    let out = qronos(&["verify", "--suite", "theorem1", "--trials", "20", "--tol", "0"]);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL theorem1"));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn lattice_networks_quantize_without_error() {
    let report = json(&qronos(&["simulate", "--layers", "3", "--width", "16", "--seeds", "2", "--init", "lattice", "--method", "rtn,optq,gpfq,qronos"]));
    for run in report["runs"].as_array().unwrap() {
        for e in run["relative_errors"].as_array().unwrap() {
            assert_eq!(e.as_f64().unwrap(), 0.0, "{}", run["method"]);
        }
    }
}
