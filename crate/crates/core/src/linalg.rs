//! Dense linear-algebra helpers layered over nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn column_means<T: Real>(x: &DMatrix<T>) -> DVector<T> {
    let n = T::of_usize(x.nrows());
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Unbiased sample covariance of the rows of `x`.
pub fn sample_covariance<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = x.nrows();
    let d = x.ncols();
    let mean = column_means(x);
    let mut centred = x.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let denom = T::of_usize(n.saturating_sub(1).max(1));
    let mut cov = centred.tr_mul(&centred) / denom;
    symmetrize(&mut cov);
    debug_assert_eq!(cov.nrows(), d);
    cov
}

pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::of(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn mean_diagonal<T: Real>(m: &DMatrix<T>) -> T {
    m.trace() / T::of_usize(m.nrows().max(1))
}

/// Cholesky factor of a covariance, adding `rel * trace/d` to the diagonal
/// when the plain factorization fails. Returns the factor and whether the
/// ridge was needed.
pub fn ridged_cholesky<T: Real>(m: &DMatrix<T>, rel: T) -> Result<(Cholesky<T, Dyn>, bool)> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok((ch, false));
    }
    let scale = mean_diagonal(m).absval().max(T::of(f64::MIN_POSITIVE));
    let mut ridge = rel * scale;
    for _ in 0..12 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok((ch, true));
        }
        ridge *= T::of(10.0);
    }
    Err(Error::Factorization(
        "covariance is not positive definite even after ridge regularisation".into(),
    ))
}

/// Ridge-regularised copy of a covariance: `m` itself when it factorizes.
pub fn ridged<T: Real>(m: &DMatrix<T>, rel: T) -> Result<(DMatrix<T>, bool)> {
    let (ch, flagged) = ridged_cholesky(m, rel)?;
    if !flagged {
        return Ok((m.clone(), false));
    }
    let l = ch.l();
    Ok((&l * l.transpose(), true))
}

/// Cholesky with diagonal jitter escalated by ×10 from `start` to `max`
/// (both absolute). Returns the factor and the jitter actually used.
pub fn jittered_cholesky<T: Real>(
    m: &DMatrix<T>,
    start: T,
    max: T,
) -> Result<(Cholesky<T, Dyn>, T)> {
    let mut jitter = start;
    loop {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok((ch, jitter));
        }
        if jitter >= max {
            return Err(Error::Factorization(format!(
                "matrix of order {} not factorizable with jitter up to {:e}",
                m.nrows(),
                max.as_f64()
            )));
        }
        jitter = (jitter * T::of(10.0)).min(max);
        if jitter <= T::zero() {
            jitter = max;
        }
    }
}

pub fn log_det_from_cholesky<T: Real>(ch: &Cholesky<T, Dyn>) -> T {
    let l = ch.l_dirty();
    let mut s = T::zero();
    for i in 0..l.nrows() {
        s += l[(i, i)].ln();
    }
    s + s
}

/// `L⁻¹` for a lower-triangular `L`, by column-oriented forward substitution.
pub fn lower_triangular_inverse<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    let lcols: Vec<&[T]> = (0..n).map(|k| &l.as_slice()[k * n..(k + 1) * n]).collect();
    let mut x = DMatrix::zeros(n, n);
    for (j, col) in x.as_mut_slice().chunks_exact_mut(n).enumerate() {
        col[j] = T::one();
        for k in j..n {
            let v = col[k] / lcols[k][k];
            col[k] = v;
            if v != T::zero() {
                for (c, &lv) in col[k + 1..].iter_mut().zip(&lcols[k][k + 1..]) {
                    *c -= v * lv;
                }
            }
        }
    }
    x
}

/// `(L Lᵀ)⁻¹` from the Cholesky factor; cheaper than nalgebra's solve against the identity.
pub fn inverse_from_cholesky<T: Real>(ch: &Cholesky<T, Dyn>) -> DMatrix<T> {
    let linv = lower_triangular_inverse(&ch.l());
    let mut inv = linv.transpose() * &linv;
    symmetrize(&mut inv);
    inv
}

/// Numerically stable `log(sum(exp(x)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let mut max = T::neg_infinity();
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut s = T::zero();
    for &x in xs {
        s += (x - max).exp();
    }
    max + s.ln()
}

/// Low-rank factor `A` (N×r) with `A Aᵀ ≈ m` from a diagonally pivoted
/// Cholesky decomposition. Stops once the largest remaining diagonal of the
/// residual falls below `rel_tol` times the largest diagonal of `m`.
pub fn pivoted_cholesky<T: Real>(m: &DMatrix<T>, rel_tol: T, max_rank: usize) -> DMatrix<T> {
    let diag = (0..m.nrows()).map(|i| m[(i, i)]).collect();
    pivoted_cholesky_with(diag, |j| m.column(j).clone_owned(), rel_tol, max_rank)
}

/// Pivoted Cholesky of a matrix known only through its diagonal and a column oracle.
pub fn pivoted_cholesky_with<T: Real, F>(diag: Vec<T>, mut column: F, rel_tol: T, max_rank: usize) -> DMatrix<T>
where
    F: FnMut(usize) -> DVector<T>,
{
    let n = diag.len();
    let mut diag: Vec<T> = diag.into_iter().map(|v| v.max(T::zero())).collect();
    let max_diag = diag.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let tol = rel_tol * max_diag;
    let mut cols: Vec<DVector<T>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let limit = max_rank.min(n);
    while cols.len() < limit {
        let (piv, &dmax) = match diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        {
            Some(x) => x,
            None => break,
        };
        if dmax <= tol || dmax <= T::zero() {
            break;
        }
        let root = dmax.sqrt();
        let mut col = column(piv);
        for prev in &cols {
            let w = prev[piv];
            if w != T::zero() {
                col.axpy(-w, prev, T::one());
            }
        }
        col /= root;
        for &p in &pivots {
            col[p] = T::zero();
        }
        col[piv] = root;
        for i in 0..n {
            let v = diag[i] - col[i] * col[i];
            diag[i] = v.max(T::zero());
        }
        diag[piv] = T::zero();
        pivots.push(piv);
        cols.push(col);
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Factor `U_T diag(sqrt λ_T)` keeping eigenvalues `λ ≥ rel_threshold · λ_max`.
pub fn spectral_factor<T: Real>(m: &DMatrix<T>, rel_threshold: T, max_rank: usize) -> DMatrix<T> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let lmax = eig.eigenvalues[order[0]];
    if lmax <= T::zero() {
        return DMatrix::zeros(n, 0);
    }
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| eig.eigenvalues[k] >= rel_threshold * lmax && eig.eigenvalues[k] > T::zero())
        .take(max_rank)
        .collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for i in 0..n {
            out[(i, j)] = eig.eigenvectors[(i, k)] * s;
        }
    }
    out
}

/// Linear-interpolated quantile (R type 7) of an ascending slice.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::of(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
