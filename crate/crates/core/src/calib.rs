//! Calibration statistics for a single layer.
//!
//! With `X` the full-precision inputs and `Xt` the inputs seen by the partially
//! quantized model (both `m x N`), the layer only ever needs
//! `H = Xt^T Xt` and `G = Xt^T X`. Both are accumulated batch by batch so the
//! activations never have to be held in memory at once.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibStats {
    h: Array2<f64>,
    g: Array2<f64>,
    n_samples: usize,
}

impl CalibStats {
    pub fn new(dim: usize) -> Self {
        Self {
            h: Array2::zeros((dim, dim)),
            g: Array2::zeros((dim, dim)),
            n_samples: 0,
        }
    }

    /// Statistics of a single `(X, Xt)` pair.
    pub fn from_activations(x: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> Result<Self> {
        let mut stats = Self::new(x.ncols());
        stats.accumulate(x, xt)?;
        Ok(stats)
    }

    /// Wraps precomputed second moments (e.g. read from disk).
    pub fn from_matrices(h: Array2<f64>, g: Array2<f64>, n_samples: usize) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::shape(format!("H is {}x{}, expected square", h.nrows(), h.ncols())));
        }
        if g.dim() != h.dim() {
            return Err(Error::shape(format!(
                "G is {}x{} but H is {}x{}",
                g.nrows(),
                g.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { h, g, n_samples })
    }

    /// Adds one batch: `H += Xt^T Xt`, `G += Xt^T X`.
    pub fn accumulate(&mut self, x: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> Result<()> {
        if x.dim() != xt.dim() {
            return Err(Error::shape(format!(
                "X batch is {}x{} but Xt batch is {}x{}",
                x.nrows(),
                x.ncols(),
                xt.nrows(),
                xt.ncols()
            )));
        }
        if x.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, statistics have dimension {}",
                x.ncols(),
                self.dim()
            )));
        }
        self.h += &xt.t().dot(&xt);
        self.g += &xt.t().dot(&x);
        self.n_samples += x.nrows();
        Ok(())
    }

    /// Combines statistics gathered independently over disjoint batches.
    pub fn merge(&mut self, other: &CalibStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::shape(format!(
                "cannot merge dimension {} into dimension {}",
                other.dim(),
                self.dim()
            )));
        }
        self.h += &other.h;
        self.g += &other.g;
        self.n_samples += other.n_samples;
        Ok(())
    }

    pub fn h(&self) -> ArrayView2<'_, f64> {
        self.h.view()
    }

    pub fn g(&self) -> ArrayView2<'_, f64> {
        self.g.view()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn into_matrices(self) -> (Array2<f64>, Array2<f64>) {
        (self.h, self.g)
    }

    /// Largest asymmetry of `H`, useful as a sanity check after accumulation.
    pub fn h_asymmetry(&self) -> f64 {
        linalg::asymmetry(self.h.view())
    }

    /// Reorders both index axes of `H` and `G` by `order`.
    pub fn permuted(&self, order: &ColumnOrder) -> Result<Self> {
        if order.len() != self.dim() {
            return Err(Error::shape(format!(
                "order has {} entries, statistics have dimension {}",
                order.len(),
                self.dim()
            )));
        }
        let p = &order.perm;
        let n = self.dim();
        Ok(Self {
            h: Array2::from_shape_fn((n, n), |(i, j)| self.h[[p[i], p[j]]]),
            g: Array2::from_shape_fn((n, n), |(i, j)| self.g[[p[i], p[j]]]),
            n_samples: self.n_samples,
        })
    }
}

/// Processing order of the input features (rows of `W`).
///
/// `perm[k]` is the original index processed at position `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnOrder {
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl ColumnOrder {
    pub fn natural(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut inverse = vec![usize::MAX; n];
        for (k, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::invalid(format!("{perm:?} is not a permutation")));
            }
            inverse[p] = k;
        }
        Ok(Self { perm, inverse })
    }

    /// Descending order of `diag(H)`; ties keep their original relative order.
    pub fn by_diag(h: ArrayView2<'_, f64>) -> Self {
        let diag = h.diag();
        let mut perm: Vec<usize> = (0..diag.len()).collect();
        perm.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));
        Self::from_perm(perm).expect("sorted indices form a permutation")
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(k, &p)| k == p)
    }

    /// 1-based positions, as usually printed in reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.perm.iter().map(|p| p + 1).collect()
    }

    /// Row `k` of the result is row `perm[k]` of `w`.
    pub fn permute_rows(&self, w: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(w.nrows())?;
        Ok(Array2::from_shape_fn(w.dim(), |(k, c)| w[[self.perm[k], c]]))
    }

    /// Inverse of [`ColumnOrder::permute_rows`].
    pub fn unpermute_rows(&self, q: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(q.nrows())?;
        Ok(Array2::from_shape_fn(q.dim(), |(i, c)| q[[self.inverse[i], c]]))
    }

    /// Reorders the columns of an activation matrix (`m x N`).
    pub fn permute_columns(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_rows(x.ncols())?;
        Ok(Array2::from_shape_fn(x.dim(), |(r, k)| x[[r, self.perm[k]]]))
    }

    fn check_rows(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::shape(format!(
                "order has {} entries, matrix has {} features",
                self.len(),
                n
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn single_batch_matches_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(20, 5, &mut rng);
        let xt = &x + &(gaussian(20, 5, &mut rng) * 0.1);
        let stats = CalibStats::from_activations(x.view(), xt.view()).unwrap();
        assert_eq!(stats.h(), xt.t().dot(&xt));
        assert_eq!(stats.g(), xt.t().dot(&x));
        assert_eq!(stats.n_samples(), 20);
        assert!(stats.h_asymmetry() <= 1e-9 * stats.h().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn halves_match_full_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(40, 6, &mut rng);
        let xt = &x + &(gaussian(40, 6, &mut rng) * 0.2);
        let full = CalibStats::from_activations(x.view(), xt.view()).unwrap();
        let mut halves = CalibStats::new(6);
        halves.accumulate(x.slice(s![..20, ..]), xt.slice(s![..20, ..])).unwrap();
        halves.accumulate(x.slice(s![20.., ..]), xt.slice(s![20.., ..])).unwrap();
        let scale = linalg::frobenius(full.h());
        assert!(linalg::frobenius((&full.h() - &halves.h()).view()) <= 1e-12 * scale);
        assert!(linalg::frobenius((&full.g() - &halves.g()).view()) <= 1e-12 * scale);
        assert_eq!(halves.n_samples(), 40);
    }

    #[test]
    fn identical_inputs_give_equal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(30, 4, &mut rng);
        let stats = CalibStats::from_activations(x.view(), x.view()).unwrap();
        assert_eq!(stats.h(), stats.g());
    }

    #[test]
    fn shape_errors() {
        let mut stats = CalibStats::new(3);
        assert!(stats.accumulate(Array2::zeros((2, 3)).view(), Array2::zeros((3, 3)).view()).is_err());
        assert!(stats.accumulate(Array2::zeros((2, 4)).view(), Array2::zeros((2, 4)).view()).is_err());
        assert!(stats.merge(&CalibStats::new(2)).is_err());
        assert!(CalibStats::from_matrices(Array2::zeros((2, 2)), Array2::zeros((2, 3)), 0).is_err());
    }

    #[test]
    fn merge_is_commutative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (gaussian(10, 3, &mut rng), gaussian(12, 3, &mut rng));
        let sa = CalibStats::from_activations(a.view(), a.view()).unwrap();
        let sb = CalibStats::from_activations(b.view(), b.view()).unwrap();
        let mut ab = sa.clone();
        ab.merge(&sb).unwrap();
        let mut ba = sb.clone();
        ba.merge(&sa).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn diag_order_examples() {
        let h = Array2::from_diag(&array![1.0, 3.0, 2.0]);
        assert_eq!(ColumnOrder::by_diag(h.view()).one_based(), vec![2, 3, 1]);
        let h = Array2::from_diag(&array![2.0, 2.0, 2.0, 2.0]);
        assert!(ColumnOrder::by_diag(h.view()).is_identity());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Array2::from_diag(&Array1::from_shape_fn(64, |_| rng.random_range(0.0..10.0)));
        let order = ColumnOrder::by_diag(h.view());
        let sorted: Vec<f64> = order.perm().iter().map(|&p| h[[p, p]]).collect();
        assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
    }

    use ndarray::Array1;

    #[test]
    fn damping_does_not_change_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(50, 12, &mut rng);
        let h = x.t().dot(&x);
        let mut damped = h.clone();
        damped.diag_mut().mapv_inplace(|d| d + 0.37);
        assert_eq!(ColumnOrder::by_diag(h.view()), ColumnOrder::by_diag(damped.view()));
    }

    #[test]
    fn permutation_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = gaussian(9, 4, &mut rng);
        let order = ColumnOrder::from_perm(vec![3, 1, 8, 0, 2, 7, 5, 4, 6]).unwrap();
        let back = order.unpermute_rows(order.permute_rows(w.view()).unwrap().view()).unwrap();
        assert_eq!(back, w);

        let natural = ColumnOrder::natural(9);
        assert_eq!(natural.permute_rows(w.view()).unwrap(), w);
        assert!(ColumnOrder::from_perm(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn permuted_stats_match_permuted_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = gaussian(25, 5, &mut rng);
        let xt = &x + &(gaussian(25, 5, &mut rng) * 0.3);
        let order = ColumnOrder::from_perm(vec![4, 2, 0, 1, 3]).unwrap();
        let direct = CalibStats::from_activations(
            order.permute_columns(x.view()).unwrap().view(),
            order.permute_columns(xt.view()).unwrap().view(),
        )
        .unwrap();
        let permuted = CalibStats::from_activations(x.view(), xt.view())
            .unwrap()
            .permuted(&order)
            .unwrap();
        let scale = linalg::frobenius(direct.h());
        assert!(linalg::frobenius((&direct.h() - &permuted.h()).view()) <= 1e-12 * scale);
        assert!(linalg::frobenius((&direct.g() - &permuted.g()).view()) <= 1e-12 * scale);
    }
}
