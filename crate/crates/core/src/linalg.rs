//! Small dense complex linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on Hermitian positive (semi)definite matrices of
//! modest size (a few antennas). Inverses are realized through Cholesky
//! solves; eigen-decomposition is only the fallback when a factorization
//! fails on conditioning.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Real parts of the eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Natural-log determinant of a Hermitian positive-definite matrix.
///
/// Cholesky first; on failure falls back to the eigen-decomposition and
/// errors only if an eigenvalue is non-positive.
pub fn logdet_hpd(a: &CMat) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if let Some(ch) = Cholesky::new(a.clone()) {
        let l = ch.l_dirty();
        let mut acc = 0.0;
        for i in 0..a.nrows() {
            acc += l[(i, i)].re.ln();
        }
        return Ok(2.0 * acc);
    }
    let ev = hermitian_eigenvalues(a);
    if ev.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NotPositiveDefinite("log-determinant"));
    }
    Ok(ev.iter().map(|x| x.ln()).sum())
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.solve(b));
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    if eig.eigenvalues.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NotPositiveDefinite("linear solve"));
    }
    let v = &eig.eigenvectors;
    let mut tmp = v.adjoint() * b;
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        let inv = c(1.0 / lam, 0.0);
        for j in 0..tmp.ncols() {
            tmp[(i, j)] *= inv;
        }
    }
    Ok(v * tmp)
}

/// Inverse of a Hermitian positive-definite matrix, symmetrized.
pub fn inverse_hpd(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    Ok(hermitian_part(&solve_hpd(a, &identity(n))?))
}

/// Inverse of a Hermitian PD matrix with its eigenvalues clamped to
/// `max_eig`. Used for MMSE weights, which blow up as rates saturate.
pub fn inverse_hpd_clamped(a: &CMat, max_eig: f64) -> Result<CMat> {
    let inv = inverse_hpd(a)?;
    let eig = SymmetricEigen::new(inv.clone());
    if eig.eigenvalues.iter().all(|&x| x <= max_eig) {
        return Ok(inv);
    }
    let v = &eig.eigenvectors;
    let mut d = CMat::zeros(a.nrows(), a.nrows());
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        d[(i, i)] = c(lam.min(max_eig), 0.0);
    }
    Ok(hermitian_part(&(v * d * v.adjoint())))
}

/// Hermitian part of `a` with negative eigenvalues raised to zero. Returns
/// the floored matrix and the most negative eigenvalue seen (0 if none).
pub fn psd_floor(a: &CMat) -> (CMat, f64) {
    let h = hermitian_part(a);
    if h.nrows() == 0 {
        return (h, 0.0);
    }
    let eig = SymmetricEigen::new(h.clone());
    let worst = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.min(x));
    if worst >= 0.0 {
        return (h, 0.0);
    }
    let v = &eig.eigenvectors;
    let mut d = CMat::zeros(h.nrows(), h.nrows());
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        d[(i, i)] = c(lam.max(0.0), 0.0);
    }
    (hermitian_part(&(v * d * v.adjoint())), worst)
}

/// `I_cols ⊗ A`.
pub fn kron_identity(a: &CMat, cols: usize) -> CMat {
    let m = a.nrows();
    let mut out = CMat::zeros(m * cols, m * cols);
    for b in 0..cols {
        out.view_mut((b * m, b * m), (m, m)).copy_from(a);
    }
    out
}

/// Trace of a square complex matrix.
pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Squared Frobenius norm, i.e. `tr(A A^H)`.
pub fn fro2(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Column-major vectorization `vec(A)`.
pub fn vec(a: &CMat) -> CVec {
    CVec::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[C64], rows: usize, cols: usize) -> CMat {
    CMat::from_column_slice(rows, cols, v)
}

/// Lifts a complex Hermitian form `p^H A p` to the real form `x^T A_r x`
/// over `x = [Re p; Im p]`, with `A_r = [[Re A, -Im A], [Im A, Re A]]`.
pub fn realify_hermitian(a: &CMat) -> RMat {
    let n = a.nrows();
    let mut r = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            r[(i, j)] = z.re;
            r[(i + n, j + n)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
        }
    }
    r
}

/// Dense Cholesky-based solve for real symmetric positive-definite systems,
/// with escalating diagonal regularization when the factorization fails.
pub fn solve_spd_regularized(h: &RMat, rhs: &RVec) -> Option<RVec> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut m = h.clone();
        if reg > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += reg;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hpd(n: usize, seed: u64) -> CMat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        &a * a.adjoint() + identity(n) * c(0.1, 0.0)
    }

    #[test]
    fn logdet_matches_eigen_sum() {
        let a = random_hpd(4, 3);
        let ev = hermitian_eigenvalues(&a);
        let expected: f64 = ev.iter().map(|x| x.ln()).sum();
        assert!((logdet_hpd(&a).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn solve_round_trips() {
        let a = random_hpd(3, 7);
        let b = CMat::from_fn(3, 2, |i, j| c(i as f64, j as f64 - 1.0));
        let x = solve_hpd(&a, &b).unwrap();
        assert!((&a * x - b).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = CMat::zeros(2, 2);
        assert!(logdet_hpd(&a).is_err());
    }

    #[test]
    fn clamped_inverse_caps_eigenvalues() {
        let mut a = identity(2);
        a[(0, 0)] = c(1e-14, 0.0);
        let u = inverse_hpd_clamped(&a, 1e12).unwrap();
        let ev = hermitian_eigenvalues(&u);
        assert!(ev[1] <= 1e12 * (1.0 + 1e-9));
        assert!((ev[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn realified_form_matches_complex_form() {
        let a = random_hpd(3, 11);
        let p = CVec::from_vec(vec![c(0.3, -1.0), c(2.0, 0.5), c(-0.7, 0.1)]);
        let complex = (p.adjoint() * &a * &p)[(0, 0)].re;
        let x = RVec::from_iterator(6, p.iter().map(|z| z.re).chain(p.iter().map(|z| z.im)));
        let real = (x.transpose() * realify_hermitian(&a) * &x)[(0, 0)];
        assert!((complex - real).abs() < 1e-12);
    }
}
