//! Every rounding method on the same mismatched layer, next to the exhaustive optimum.
//!
//! With eight inputs and three levels the global optimum of `1/2 ||Xw - Xt q||^2`
//! is found by enumerating all 6561 candidates per column.

use ndarray::Array2;
use qronos::oracle;
use qronos::{quantize_layer, CalibStats, DampingPolicy, GridConfig, LayerQuantRequest, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> qronos::Result<()> {
    let (m, n, outputs) = (24, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let xt = &x + &Array2::from_shape_fn((m, n), |_| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let w = Array2::from_shape_fn((n, outputs), |_| rng.sample::<f64, _>(StandardNormal));
    let stats = CalibStats::from_activations(x.view(), xt.view())?;
    let grids = GridConfig::minmax(3, 1.0).per_channel(w.view())?;

    let mut optimum = 0.0;
    for (c, grid) in grids.iter().enumerate() {
        let (_, obj) = oracle::brute_force_ils(
            w.column(c),
            x.view(),
            xt.view(),
            grid,
            oracle::DEFAULT_ENUMERATION_CAP,
        )?;
        optimum += obj;
    }
    println!("{:<12} {:>12}", "method", "objective");
    println!("{:<12} {:>12.5}", "optimum", optimum);
    for method in Method::ALL {
        let req = LayerQuantRequest::new(w.view(), &stats, &grids, method)
            .with_damping(DampingPolicy::none())
            .with_activations(x.view(), xt.view());
        let result = quantize_layer(&req)?;
        println!("{:<12} {:>12.5}", method, result.report.total_objective);
    }
    Ok(())
}
