//! Accumulate calibration statistics batch by batch, and merge partial results.
//!
//! Only `H = Xt^T Xt` and `G = Xt^T X` are kept, so memory stays at `O(N^2)`
//! however many rows pass through.

use ndarray::{s, Array2};
use qronos::{linalg, CalibStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> qronos::Result<()> {
    let (m, n) = (4096, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let xt = x.mapv(|v| (v * 8.0).round() / 8.0);

    let mut left = CalibStats::new(n);
    let mut right = CalibStats::new(n);
    for start in (0..m).step_by(256) {
        let rows = s![start..start + 256, ..];
        let target = if start < m / 2 { &mut left } else { &mut right };
        target.accumulate(x.slice(rows), xt.slice(rows))?;
    }
    left.merge(&right)?;

    let whole = CalibStats::from_activations(x.view(), xt.view())?;
    let dh = linalg::frobenius((&left.h() - &whole.h()).view()) / linalg::frobenius(whole.h());
    let dg = linalg::frobenius((&left.g() - &whole.g()).view()) / linalg::frobenius(whole.g());
    println!("samples            {}", left.n_samples());
    println!("H relative diff    {dh:.2e}");
    println!("G relative diff    {dg:.2e}");
    println!("H asymmetry        {:.2e}", left.h_asymmetry());
    Ok(())
}
