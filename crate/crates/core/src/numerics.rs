//! Shared numerical primitives: truncated symmetric eigendecomposition,
//! half-vectorization, regularized inverses and the chi-square distribution.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated by [`eigh_topk`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Eigenvalues below `REGULARIZE_REL * trace` are lifted to that floor when
/// inverting a long-run variance.
pub const REGULARIZE_REL: f64 = 1e-10;

/// Top-`k` eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigenResult {
    /// Sorted in descending order.
    pub eigenvalues: DVector<f64>,
    /// `n x k`, orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::shape(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = max_abs(s).max(f64::MIN_POSITIVE);
    let n = s.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::shape(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn decompose(s: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::Numerical(format!("symmetric eigensolver did not converge (n = {n})")))
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

/// Top-`k` eigenpairs by algebraic value, descending. Each eigenvector is
/// signed so that its largest-magnitude entry is positive.
pub fn eigh_topk(s: &DMatrix<f64>, k: usize) -> Result<SymmetricEigenResult> {
    check_symmetric(s)?;
    let n = s.nrows();
    if k == 0 || k > n {
        return Err(Error::shape(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    let eig = decompose(s)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(k, order.iter().take(k).map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, k);
    for (j, &i) in order.iter().take(k).enumerate() {
        eigenvectors.set_column(j, &eig.eigenvectors.column(i));
        canonical_sign(eigenvectors.column_mut(j));
    }
    Ok(SymmetricEigenResult {
        eigenvalues,
        eigenvectors,
    })
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn eigenvalues_desc(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(s)?;
    let sym = (s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Column-major stacking of the lower triangle, diagonal included.
pub fn vech(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !s.is_square() {
        return Err(Error::shape(format!("vech of a {}x{} matrix", s.nrows(), s.ncols())));
    }
    let r = s.nrows();
    let mut out = DVector::zeros(r * (r + 1) / 2);
    let mut idx = 0;
    for j in 0..r {
        for i in j..r {
            out[idx] = s[(i, j)];
            idx += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`vech`]: rebuilds the symmetric matrix.
pub fn unvech(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let len = v.len();
    // r(r+1)/2 = len
    let r = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if r * (r + 1) / 2 != len {
        return Err(Error::shape(format!("{len} is not a triangular number")));
    }
    let mut out = DMatrix::zeros(r, r);
    let mut idx = 0;
    for j in 0..r {
        for i in j..r {
            out[(i, j)] = v[idx];
            out[(j, i)] = v[idx];
            idx += 1;
        }
    }
    Ok(out)
}

/// Projects a symmetric matrix onto the PSD cone by zeroing negative
/// eigenvalues. Returns the clipped matrix and the total negative mass removed.
/// Matrices that are already PSD are returned unchanged.
pub fn clip_psd(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = decompose(s)?;
    let clipped: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    if clipped == 0.0 {
        return Ok((s.clone(), 0.0));
    }
    let lambda = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose();
    Ok(((&out + out.transpose()) * 0.5, clipped))
}

/// `a' S^{-1} a` for a symmetric PSD `S`, lifting eigenvalues below
/// `REGULARIZE_REL * trace(S)` to that floor. The flag reports whether any
/// eigenvalue had to be lifted.
pub fn quad_form_inv(s: &DMatrix<f64>, a: &DVector<f64>) -> Result<(f64, bool)> {
    if s.nrows() != a.len() || !s.is_square() {
        return Err(Error::shape(format!(
            "quadratic form of a {}x{} matrix with a length-{} vector",
            s.nrows(),
            s.ncols(),
            a.len()
        )));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok((0.0, false));
    }
    let trace = s.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::Numerical(format!(
            "variance matrix has non-positive trace {trace}"
        )));
    }
    let eig = decompose(s)?;
    let floor = REGULARIZE_REL * trace;
    let mut regularized = false;
    let proj = eig.eigenvectors.transpose() * a;
    let mut value = 0.0;
    for (l, p) in eig.eigenvalues.iter().zip(proj.iter()) {
        let l = if *l < floor {
            regularized = true;
            floor
        } else {
            *l
        };
        value += p * p / l;
    }
    Ok((value, regularized))
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

/// Chi-square survival function `P(X > x)` for `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Domain("chi-square degrees of freedom must be positive".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-square statistic must be nonnegative, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Upper-tail quantile: the `x` with `chi2_sf(x, df) = p`, by bisection.
pub fn chi2_quantile(p: f64, df: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if df == 0 {
        return Err(Error::Domain("chi-square degrees of freedom must be positive".into()));
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while chi2_sf(hi, df)? > p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_sf(mid, df)? > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Least-squares solution of `A X = B` via the normal equations, falling
/// back to an SVD when `A'A` is ill-conditioned (condition number > 1e12).
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape(format!(
            "least squares with {} and {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let gram = a.transpose() * a;
    let ev = eigenvalues_desc(&gram)?;
    let (largest, smallest) = (ev[0], *ev.last().unwrap_or(&0.0));
    if !(largest > 0.0) || smallest <= largest * 1e-14 * ev.len() as f64 {
        return Err(Error::RankDeficient(format!(
            "Gram matrix is singular (eigenvalues {largest:.3e} .. {smallest:.3e})"
        )));
    }
    let rhs = a.transpose() * b;
    if largest / smallest <= 1e12 {
        if let Some(chol) = gram.clone().cholesky() {
            return Ok(chol.solve(&rhs));
        }
    }
    let svd = a.clone().svd(true, true);
    svd.solve(b, f64::EPSILON * largest.sqrt())
        .map_err(|e| Error::Numerical(format!("SVD least squares failed: {e}")))
}
