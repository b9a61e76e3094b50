//! Uniform quantization grids and the round-to-nearest operator.
//!
//! A grid with `levels` points, step size `s` and zero point `z` represents the
//! alphabet `{ s * (k - z) : k = 0, 1, ..., levels - 1 }`. Integer codes are
//! always clipped to `[0, levels - 1]`, so every grid has exactly `levels`
//! representable values regardless of whether `z` is integral.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of trial scales used by [`symmetric_scale_search`] by default.
pub const DEFAULT_SCALE_CANDIDATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    levels: u32,
    step_size: f64,
    zero_point: f64,
    beta: f64,
    symmetric: bool,
    degenerate: bool,
}

impl QuantGrid {
    /// Builds an asymmetric grid from explicit parameters.
    pub fn new(levels: u32, step_size: f64, zero_point: f64) -> Result<Self> {
        if levels < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 levels, got {levels}")));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {step_size}")));
        }
        if !zero_point.is_finite() {
            return Err(Error::invalid("zero point must be finite"));
        }
        Ok(Self {
            levels,
            step_size,
            zero_point,
            beta: 1.0,
            symmetric: false,
            degenerate: false,
        })
    }

    /// Symmetric grid: zero point sits at the centre code `(levels - 1) / 2`.
    pub fn symmetric(levels: u32, step_size: f64) -> Result<Self> {
        let mut grid = Self::new(levels, step_size, f64::from(levels - 1) / 2.0)?;
        grid.symmetric = true;
        Ok(grid)
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn zero_point(&self) -> f64 {
        self.zero_point
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Set when the grid was built from a constant (or all-zero) input.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn max_code(&self) -> f64 {
        f64::from(self.levels - 1)
    }

    /// Integer code of the nearest representable value, clipped to `[0, levels - 1]`.
    ///
    /// Ties round half away from zero. When `z` is integral the rounding is applied
    /// to `x / s` before the shift, which keeps odd symmetric grids exactly odd.
    pub fn code(&self, x: f64) -> u32 {
        let scaled = x / self.step_size;
        let raw = if self.zero_point.fract() == 0.0 {
            scaled.round() + self.zero_point
        } else {
            (scaled + self.zero_point).round()
        };
        // NaN inputs clamp to code 0.
        let clipped = raw.clamp(0.0, self.max_code());
        if clipped.is_nan() {
            0
        } else {
            clipped as u32
        }
    }

    pub fn dequantize(&self, code: u32) -> f64 {
        debug_assert!(code < self.levels);
        self.step_size * (f64::from(code) - self.zero_point)
    }

    /// The round-to-nearest operator: nearest grid value with clipping.
    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        self.dequantize(self.code(x))
    }

    /// All representable values in code order.
    pub fn alphabet(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.dequantize(k)).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.dequantize(0)
    }

    pub fn max_value(&self) -> f64 {
        self.dequantize(self.levels - 1)
    }

    /// True when `x` is an exact fixed point of [`QuantGrid::quantize`].
    pub fn contains(&self, x: f64) -> bool {
        self.quantize(x) == x
    }
}

/// Level count for a bit width; `1.58` (ternary) maps to 3 levels.
pub fn levels_for_bits(bits: f64) -> Result<u32> {
    if (bits - 1.58).abs() < 1e-9 {
        return Ok(3);
    }
    if bits.fract() != 0.0 || !(1.0..=24.0).contains(&bits) {
        return Err(Error::invalid(format!("unsupported bit width {bits}")));
    }
    Ok(1u32 << (bits as u32))
}

/// Scaled min-max asymmetric grid: `s = beta * (max - min) / (levels - 1)`, `z = -beta * min / s`.
///
/// A constant input yields a degenerate grid with `s = 1` and `z = -min`, which maps
/// the constant onto itself.
pub fn grid_from_minmax(w: ArrayView1<'_, f64>, levels: u32, beta: f64) -> Result<QuantGrid> {
    if w.is_empty() {
        return Err(Error::invalid("cannot build a grid from an empty vector"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("non-finite weights"));
    }
    if hi == lo {
        let mut grid = QuantGrid::new(levels, 1.0, -lo)?;
        grid.degenerate = true;
        grid.beta = beta;
        return Ok(grid);
    }
    let step = beta * (hi - lo) / f64::from(levels - 1);
    let mut grid = QuantGrid::new(levels, step, -beta * lo / step)?;
    grid.beta = beta;
    Ok(grid)
}

fn rtn_sq_error(w: ArrayView1<'_, f64>, grid: &QuantGrid) -> f64 {
    w.iter()
        .map(|&v| {
            let d = v - grid.quantize(v);
            d * d
        })
        .sum()
}

/// Symmetric grid whose step size minimizes the squared RTN error among
/// `candidates` trial scales linearly spaced over `[0.2, 1.0] * 2 max|w| / (levels - 1)`.
///
/// Trials run from the plain max-abs scale downwards; ties keep the larger scale.
pub fn symmetric_scale_search(
    w: ArrayView1<'_, f64>,
    levels: u32,
    candidates: usize,
) -> Result<QuantGrid> {
    if w.is_empty() {
        return Err(Error::invalid("cannot build a grid from an empty vector"));
    }
    if candidates < 2 {
        return Err(Error::invalid("scale search needs at least 2 candidates"));
    }
    let max_abs = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if !max_abs.is_finite() {
        return Err(Error::invalid("non-finite weights"));
    }
    if max_abs == 0.0 {
        let mut grid = QuantGrid::new(levels, 1.0, 0.0)?;
        grid.degenerate = true;
        return Ok(grid);
    }
    let full_scale = 2.0 * max_abs / f64::from(levels - 1);
    let mut best: Option<(f64, QuantGrid)> = None;
    for i in 0..candidates {
        let frac = 1.0 - 0.8 * (i as f64) / ((candidates - 1) as f64);
        let grid = QuantGrid::symmetric(levels, frac * full_scale)?;
        let err = rtn_sq_error(w, &grid);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, grid));
        }
    }
    Ok(best.map(|(_, g)| g).expect("candidates >= 2"))
}

/// Dynamic per-row (per-token) asymmetric min-max quantization with `beta = 1`.
pub fn quantize_per_token(x: ArrayView2<'_, f64>, levels: u32) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let grid = grid_from_minmax(row.view(), levels, 1.0)?;
        row.mapv_inplace(|v| grid.quantize(v));
    }
    Ok(out)
}

/// How per-channel grids are built for a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub levels: u32,
    /// Range shrink for min-max grids; ignored by symmetric grids.
    pub beta: f64,
    /// Symmetric grids use the searched scale instead of min-max.
    pub symmetric: bool,
}

impl GridConfig {
    pub fn minmax(levels: u32, beta: f64) -> Self {
        Self {
            levels,
            beta,
            symmetric: false,
        }
    }

    pub fn symmetric(levels: u32) -> Self {
        Self {
            levels,
            beta: 1.0,
            symmetric: true,
        }
    }

    pub fn grid_for(&self, w: ArrayView1<'_, f64>) -> Result<QuantGrid> {
        if self.symmetric {
            symmetric_scale_search(w, self.levels, DEFAULT_SCALE_CANDIDATES)
        } else {
            grid_from_minmax(w, self.levels, self.beta)
        }
    }

    /// One grid per column (output channel) of `w`.
    pub fn per_channel(&self, w: ArrayView2<'_, f64>) -> Result<Vec<QuantGrid>> {
        w.columns().into_iter().map(|c| self.grid_for(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minmax_examples() {
        let g = grid_from_minmax(array![-1.0, 0.5].view(), 4, 1.0).unwrap();
        assert_abs_diff_eq!(g.step_size(), 0.5);
        assert_abs_diff_eq!(g.zero_point(), 2.0);

        let g = grid_from_minmax(array![0.0, 3.0].view(), 4, 1.0).unwrap();
        assert_abs_diff_eq!(g.step_size(), 1.0);
        assert_abs_diff_eq!(g.zero_point(), 0.0);

        let g = grid_from_minmax(array![-1.0, 1.0].view(), 4, 0.8).unwrap();
        assert_abs_diff_eq!(g.step_size(), 0.8 * 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.zero_point(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.min_value(), -0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(g.max_value(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn minmax_degenerate_and_empty() {
        let g = grid_from_minmax(array![2.5, 2.5].view(), 4, 1.0).unwrap();
        assert!(g.is_degenerate());
        assert_eq!(g.step_size(), 1.0);
        assert_eq!(g.quantize(2.5), 2.5);
        assert!(grid_from_minmax(Array1::<f64>::zeros(0).view(), 4, 1.0).is_err());
    }

    #[test]
    fn rtn_examples() {
        let g = QuantGrid::new(4, 0.5, 2.0).unwrap();
        assert_eq!(g.quantize(-0.3), -0.5);
        assert_eq!(g.quantize(-5.0), -1.0);
        assert_eq!(g.quantize(0.5), 0.5);
        assert_eq!(g.quantize(100.0), 0.5);
    }

    #[test]
    fn bits_to_levels() {
        assert_eq!(levels_for_bits(1.58).unwrap(), 3);
        assert_eq!(levels_for_bits(2.0).unwrap(), 4);
        assert_eq!(levels_for_bits(4.0).unwrap(), 16);
        assert!(levels_for_bits(2.5).is_err());
    }

    #[test]
    fn rtn_half_step_and_cardinality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Array1<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = grid_from_minmax(w.view(), 8, 0.9).unwrap();
        let mut seen = Vec::new();
        for &v in w.iter() {
            let q = g.quantize(v);
            if v >= g.min_value() && v <= g.max_value() {
                assert!((v - q).abs() <= g.step_size() / 2.0 + 1e-12);
            }
            assert_eq!(g.quantize(q), q);
            if !seen.contains(&q) {
                seen.push(q);
            }
        }
        assert!(seen.len() <= 8);
    }

    #[test]
    fn ternary_symmetric_is_odd() {
        let g = QuantGrid::symmetric(3, 0.7).unwrap();
        for &v in &[0.35, 0.1, 1.0, 5.0, 0.349_999, 0.0] {
            assert_eq!(g.quantize(-v), -g.quantize(v));
        }
        assert_eq!(g.quantize(0.0), 0.0);
        // even symmetric grids put zero half a step from the alphabet
        let g = QuantGrid::symmetric(4, 1.0).unwrap();
        assert_eq!(g.alphabet(), vec![-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn scale_search_examples() {
        let g = symmetric_scale_search(array![1.0, -1.0].view(), 3, 100).unwrap();
        assert_eq!(g.step_size(), 1.0);
        assert_eq!(g.quantize(1.0), 1.0);
        assert_eq!(g.quantize(-1.0), -1.0);

        // input lying on the max-abs candidate grid is reproduced
        let w = Array1::from(QuantGrid::symmetric(16, 0.2).unwrap().alphabet());
        let g = symmetric_scale_search(w.view(), 16, 100).unwrap();
        assert!(rtn_sq_error(w.view(), &g) < 1e-24);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w: Array1<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let searched = symmetric_scale_search(w.view(), 16, 100).unwrap();
            let max_abs = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let plain = QuantGrid::symmetric(16, 2.0 * max_abs / 15.0).unwrap();
            assert!(rtn_sq_error(w.view(), &searched) <= rtn_sq_error(w.view(), &plain));
        }
        assert!(symmetric_scale_search(Array1::zeros(3).view(), 4, 100)
            .unwrap()
            .is_degenerate());
    }

    #[test]
    fn per_token_examples() {
        let x = array![[0.0, 1.0, 2.0, 3.0], [5.0, 5.0, 5.0, 5.0]];
        let q = quantize_per_token(x.view(), 4).unwrap();
        assert_eq!(q, x);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((6, 32), |_| rng.random_range(-3.0..3.0));
        let q = quantize_per_token(x.view(), 16).unwrap();
        for (row, qrow) in x.rows().into_iter().zip(q.rows()) {
            let g = grid_from_minmax(row, 16, 1.0).unwrap();
            for (&a, &b) in row.iter().zip(qrow.iter()) {
                assert!((a - b).abs() <= g.step_size() / 2.0 + 1e-12);
            }
        }
    }
}
