//! Algorithm time of base and efficient Qronos as the layer grows.
//!
//! The base form re-solves a least-squares problem at every step; the efficient
//! form pays for one inversion and then only Cholesky-column updates.

use qronos::bench::{self, BenchConfig};
use qronos::Method;

fn main() -> qronos::Result<()> {
    let config = BenchConfig {
        k_min: 32,
        k_max: 256,
        m: 1000,
        seeds: vec![0],
        methods: vec![Method::Optq, Method::QronosBase, Method::Qronos],
        ..BenchConfig::default()
    };
    let report = bench::run(&config)?;
    println!("{:>5} {:>12} {:>12} {:>12} {:>8}", "K", "optq (s)", "base (s)", "qronos (s)", "speedup");
    for k in config.ladder()? {
        let t = |m| report.cell(m, k, 0).and_then(|c| c.algorithm.as_ref()).map_or(f64::NAN, |t| t.min_seconds);
        let (o, b, q) = (t(Method::Optq), t(Method::QronosBase), t(Method::Qronos));
        println!("{k:>5} {o:>12.5} {b:>12.5} {q:>12.5} {:>8.1}", b / q);
    }
    Ok(())
}
