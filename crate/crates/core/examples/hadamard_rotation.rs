//! Rotating a layer by a Hadamard matrix leaves its function unchanged but
//! spreads out weight outliers, which changes how well it quantizes.

use ndarray::Array2;
use qronos::netsim::hadamard_rotate;
use qronos::{quantize_layer, CalibStats, GridConfig, LayerQuantRequest, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rel_err(x: &Array2<f64>, w: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let y = x.dot(w);
    (&y - &x.dot(q)).mapv(|v| v * v).sum().sqrt() / y.mapv(|v| v * v).sum().sqrt()
}

fn main() -> qronos::Result<()> {
    let (m, n, outputs) = (512, 64, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let mut w = Array2::from_shape_fn((n, outputs), |_| rng.sample::<f64, _>(StandardNormal));
    // a few heavy outliers
    for c in 0..outputs {
        w[[c % n, c]] *= 12.0;
    }
    let (w_rot, x_rot) = hadamard_rotate(w.view(), x.view())?;
    let product_gap = (&x.dot(&w) - &x_rot.dot(&w_rot)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    println!("max |XW - X'W'|    {product_gap:.2e}");

    for (name, xx, ww) in [("plain", &x, &w), ("rotated", &x_rot, &w_rot)] {
        let stats = CalibStats::from_activations(xx.view(), xx.view())?;
        let grids = GridConfig::minmax(4, 1.0).per_channel(ww.view())?;
        for method in [Method::Rtn, Method::Optq] {
            let q = quantize_layer(&LayerQuantRequest::new(ww.view(), &stats, &grids, method))?.q;
            println!("{name:<8} {method:<6} relative error {:.4}", rel_err(xx, ww, &q));
        }
    }
    Ok(())
}
