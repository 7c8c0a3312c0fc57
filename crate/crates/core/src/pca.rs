//! Principal-components estimation of factors and loadings, and
//! factor-count selection.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{canonical_sign, eigenvalues_desc, eigh_topk};
use crate::panel_io::Panel;

/// Relative size of the r-th eigenvalue below which the fit is rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Factors and loadings estimated on one (sub)sample under the normalization
/// `F'F / T_m = I_r` and `Λ'Λ / N` diagonal.
#[derive(Debug, Clone, Serialize)]
pub struct FactorEstimate {
    /// `T_m x r`
    pub factors: DMatrix<f64>,
    /// `N x r`
    pub loadings: DMatrix<f64>,
    /// Top-r eigenvalues of `X X' / (N T_m)`, non-increasing.
    pub eigvals: DVector<f64>,
    /// Rows of the parent panel this estimate was fitted on.
    pub span: Range<usize>,
}

impl FactorEstimate {
    pub fn r(&self) -> usize {
        self.factors.ncols()
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn t(&self) -> usize {
        self.factors.nrows()
    }

    /// `F Λ'`, the fitted common component.
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose()
    }

    /// Same estimate, relabelled as covering `span` of a parent panel.
    pub fn with_span(mut self, span: Range<usize>) -> Result<Self> {
        if span.len() != self.t() {
            return Err(Error::shape(format!(
                "span of length {} for an estimate on {} periods",
                span.len(),
                self.t()
            )));
        }
        self.span = span;
        Ok(self)
    }

    /// Flip the sign of factor `j` together with its loadings.
    pub fn flip(&mut self, j: usize) {
        self.factors.column_mut(j).neg_mut();
        self.loadings.column_mut(j).neg_mut();
    }
}

/// Principal components with `r` factors on a `T_m x N` block.
///
/// The factors are `sqrt(T_m)` times the top-r eigenvectors of `X X'`. When
/// `T_m > N` the `N x N` problem `X'X u = μ u` is solved instead and mapped
/// back through `v = X u / sqrt(μ)`, which has the same nonzero spectrum.
pub fn estimate_factors(x: &DMatrix<f64>, r: usize) -> Result<FactorEstimate> {
    let (t, n) = x.shape();
    if r == 0 || r >= t.min(n) {
        return Err(Error::shape(format!(
            "{r} factors requested from a {t}x{n} panel (need 1 <= r < min(T, N))"
        )));
    }
    let (lambda, mut factors) = if t <= n {
        let gram = x * x.transpose();
        let eig = eigh_topk(&gram, r)?;
        check_rank(&eig.eigenvalues, r)?;
        (eig.eigenvalues, eig.eigenvectors * (t as f64).sqrt())
    } else {
        let gram = x.transpose() * x;
        let eig = eigh_topk(&gram, r)?;
        check_rank(&eig.eigenvalues, r)?;
        let mut v = x * &eig.eigenvectors;
        for (j, mut col) in v.column_iter_mut().enumerate() {
            col /= eig.eigenvalues[j].sqrt();
        }
        (eig.eigenvalues, v * (t as f64).sqrt())
    };
    for j in 0..r {
        canonical_sign(factors.column_mut(j));
    }
    let loadings = x.transpose() * &factors / t as f64;
    Ok(FactorEstimate {
        factors,
        loadings,
        eigvals: lambda / (n as f64 * t as f64),
        span: 0..t,
    })
}

fn check_rank(lambda: &DVector<f64>, r: usize) -> Result<()> {
    let first = lambda[0];
    let last = lambda[r - 1];
    if !(first > 0.0) || last <= RANK_TOL * first {
        return Err(Error::RankDeficient(format!(
            "eigenvalue {r} is {last:.3e} against a leading eigenvalue of {first:.3e}"
        )));
    }
    Ok(())
}

/// Estimate on rows `range` of `panel`.
pub fn estimate_on(panel: &Panel, range: Range<usize>, r: usize) -> Result<FactorEstimate> {
    let block = panel.rows(range.clone());
    estimate_factors(&block, r)?.with_span(range)
}

/// Eigenvalues of `X X' / (N T)`, descending, of length `min(T, N)`.
pub fn spectrum(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (t, n) = x.shape();
    let gram = if t <= n { x * x.transpose() } else { x.transpose() * x };
    let scale = (n * t) as f64;
    Ok(eigenvalues_desc(&gram)?.into_iter().map(|l| l.max(0.0) / scale).collect())
}

fn check_rmax(x: &DMatrix<f64>, r_max: usize) -> Result<()> {
    let (t, n) = x.shape();
    if r_max == 0 || r_max >= t.min(n) {
        return Err(Error::shape(format!(
            "r_max = {r_max} must satisfy 1 <= r_max < min(T, N) = {}",
            t.min(n)
        )));
    }
    Ok(())
}

/// Bai–Ng `IC_p2`: argmin over `k in 1..=r_max` of
/// `ln V(k) + k (N + T)/(N T) ln min(N, T)`.
pub fn ic_p2(x: &DMatrix<f64>, r_max: usize) -> Result<usize> {
    check_rmax(x, r_max)?;
    let (t, n) = x.shape();
    let ev = spectrum(x)?;
    let total: f64 = ev.iter().sum();
    // residual variances at rounding level are indistinguishable
    let floor = 1e-14 * total;
    let penalty = (n + t) as f64 / (n * t) as f64 * (n.min(t) as f64).ln();
    let mut explained = 0.0;
    let mut best = (f64::INFINITY, 1);
    for k in 1..=r_max {
        explained += ev[k - 1];
        let v = (total - explained).max(floor);
        let ic = v.ln() + k as f64 * penalty;
        if ic < best.0 {
            best = (ic, k);
        }
    }
    Ok(best.1)
}

/// Ahn–Horenstein eigenvalue ratio: argmax over `k in 1..=r_max` of
/// `λ_k / λ_{k+1}`.
pub fn eigenvalue_ratio(x: &DMatrix<f64>, r_max: usize) -> Result<usize> {
    check_rmax(x, r_max)?;
    let ev = spectrum(x)?;
    let floor = 1e-14 * ev[0];
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..=r_max {
        let ratio = ev[k - 1].max(floor) / ev[k].max(floor);
        if ratio > best.0 {
            best = (ratio, k);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn low_rank(t: usize, n: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian(t, r, &mut rng) * gaussian(n, r, &mut rng).transpose()
    }

    #[test]
    fn noiseless_reconstruction_both_routes() {
        for (t, n) in [(40, 60), (80, 30)] {
            let x = low_rank(t, n, 2, 7);
            let est = estimate_factors(&x, 2).unwrap();
            assert_abs_diff_eq!(est.common_component(), x, epsilon = 1e-8);
            let ftf = est.factors.transpose() * &est.factors / t as f64;
            assert_abs_diff_eq!(ftf, DMatrix::identity(2, 2), epsilon = 1e-8);
        }
    }

    #[test]
    fn loadings_gram_is_diagonal_eigvals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = low_rank(50, 70, 3, 1) + gaussian(50, 70, &mut rng) * 0.3;
        let est = estimate_factors(&x, 3).unwrap();
        let g = est.loadings.transpose() * &est.loadings / 70.0;
        assert_abs_diff_eq!(g, DMatrix::from_diagonal(&est.eigvals), epsilon = 1e-6);
        assert!(est.eigvals[0] >= est.eigvals[1] && est.eigvals[1] >= est.eigvals[2]);
    }

    #[test]
    fn routes_agree_on_common_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = gaussian(30, 30, &mut rng);
        let a = estimate_factors(&x, 3).unwrap();
        let b = estimate_factors(&x.transpose().transpose(), 3).unwrap();
        assert_abs_diff_eq!(a.common_component(), b.common_component(), epsilon = 1e-10);
        // T > N route vs T <= N route on a tall matrix padded with zero columns
        let tall = gaussian(40, 20, &mut rng);
        let est = estimate_factors(&tall, 2).unwrap();
        let mut wide = DMatrix::zeros(40, 60);
        wide.columns_mut(0, 20).copy_from(&tall);
        let est_w = estimate_factors(&wide, 2).unwrap();
        assert_abs_diff_eq!(est.factors, est_w.factors, epsilon = 1e-8);
    }

    #[test]
    fn scale_changes_only_loadings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(30, 40, &mut rng);
        let a = estimate_factors(&x, 2).unwrap();
        let b = estimate_factors(&(&x * 3.0), 2).unwrap();
        assert_abs_diff_eq!(a.factors, b.factors, epsilon = 1e-10);
        assert_abs_diff_eq!(a.loadings * 3.0, b.loadings, epsilon = 1e-10);
    }

    #[test]
    fn nested_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = low_rank(60, 50, 3, 2) + gaussian(60, 50, &mut rng) * 0.5;
        let r3 = estimate_factors(&x, 3).unwrap();
        let r2 = estimate_factors(&x, 2).unwrap();
        assert_abs_diff_eq!(r3.factors.columns(0, 2).into_owned(), r2.factors, epsilon = 1e-8);
    }

    #[test]
    fn sign_flip_keeps_common_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = gaussian(25, 35, &mut rng);
        let mut est = estimate_factors(&x, 2).unwrap();
        let before = est.common_component();
        est.flip(1);
        assert_abs_diff_eq!(est.common_component(), before, epsilon = 1e-12);
    }

    #[test]
    fn shape_and_rank_errors() {
        let x = low_rank(20, 30, 1, 4);
        assert!(matches!(estimate_factors(&x, 20), Err(Error::Shape(_))));
        assert!(matches!(estimate_factors(&x, 0), Err(Error::Shape(_))));
        assert!(matches!(estimate_factors(&x, 2), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn factor_count_on_exact_low_rank() {
        let x = low_rank(100, 80, 3, 21);
        assert_eq!(ic_p2(&x, 8).unwrap(), 3);
        assert_eq!(eigenvalue_ratio(&x, 8).unwrap(), 3);
        assert!(matches!(eigenvalue_ratio(&x, 80), Err(Error::Shape(_))));
        assert!(matches!(ic_p2(&x, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn eigenvalue_ratio_on_white_noise_prefers_first_gap() {
        // The top of a white-noise spectrum is spread out most between the first
        // two eigenvalues, so k = 1 is the most frequent choice.
        let mut counts = [0usize; 9];
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = gaussian(100, 80, &mut rng);
            counts[eigenvalue_ratio(&x, 8).unwrap()] += 1;
        }
        let mode = (1..=8).max_by_key(|&k| counts[k]).unwrap();
        assert_eq!(mode, 1, "counts: {counts:?}");
    }
}
