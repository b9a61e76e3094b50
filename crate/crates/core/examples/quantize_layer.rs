//! Quantize one layer with Qronos from mismatched calibration inputs.
//!
//! `X` is what the full-precision model feeds the layer, `Xt` what the
//! partially quantized model feeds it. Run with
//! `cargo run --example quantize_layer`.

use ndarray::Array2;
use qronos::{quantize_layer, CalibStats, GridConfig, LayerQuantRequest, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> qronos::Result<()> {
    let (m, n, outputs) = (512, 64, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let xt = &x + &Array2::from_shape_fn((m, n), |_| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let w = Array2::from_shape_fn((n, outputs), |_| rng.sample::<f64, _>(StandardNormal));

    let stats = CalibStats::from_activations(x.view(), xt.view())?;
    let grids = GridConfig::minmax(8, 1.0).per_channel(w.view())?;
    let req = LayerQuantRequest::new(w.view(), &stats, &grids, Method::Qronos)
        .with_activations(x.view(), xt.view());
    let result = quantize_layer(&req)?;

    let reference = (x.dot(&w)).mapv(|v| v * v).sum().sqrt();
    let err = (&x.dot(&w) - &xt.dot(&result.q)).mapv(|v| v * v).sum().sqrt();
    println!("damping lambda     {:.3e}", result.report.lambda);
    println!("first positions    {:?}", &result.report.order[..8]);
    println!("total objective    {:.4}", result.report.total_objective);
    println!("relative error     {:.4}", err / reference);
    println!("distinct values in column 0: {}", {
        let mut v: Vec<f64> = result.q.column(0).to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    });
    Ok(())
}
