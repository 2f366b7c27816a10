//! Small dense complex linear-algebra helpers shared by the channel modules.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance used for Hermitian / PSD / trace checks.
pub const MATRIX_TOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// One circularly-symmetric complex Gaussian draw with `E|z|^2 = var`.
#[inline]
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..=i {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

/// Symmetrizes `m` as `(m + m^H)/2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted ascending
/// with the eigenvector columns permuted to match.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

pub fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `log2 det(m)` for a Hermitian positive definite `m`. Cholesky first; if
/// that fails on a marginal matrix, the sum of `log2` of the eigenvalues.
pub fn log2_det_hpd(m: &CMatrix) -> f64 {
    match m.clone().cholesky() {
        Some(ch) => {
            let l = ch.l_dirty();
            2.0 * (0..m.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() / std::f64::consts::LN_2
        }
        None => {
            let (vals, _) = hermitian_eigen(m);
            vals.iter().map(|v| v.max(f64::MIN_POSITIVE).log2()).sum()
        }
    }
}

/// In-place Cholesky log-determinant (natural log) of a small Hermitian
/// positive definite matrix stored row-major in `a` (`n*n` entries). Only the
/// lower triangle is read. Returns `None` if a pivot is not positive.
pub fn ln_det_hpd_in_place(a: &mut [C64], n: usize) -> Option<f64> {
    let mut acc = 0.0;
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        a[j * n + j] = C64::new(ljj, 0.0);
        acc += ljj.ln();
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / ljj;
        }
    }
    Some(2.0 * acc)
}

/// Largest singular value via SVD.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_place_cholesky_matches_nalgebra() {
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(4.0, 0.0),
                c(1.0, 1.0),
                c(0.5, 0.0),
                c(1.0, -1.0),
                c(3.0, 0.0),
                c(0.0, 0.2),
                c(0.5, 0.0),
                c(0.0, -0.2),
                c(2.0, 0.0),
            ],
        );
        let mut flat: Vec<C64> = (0..9).map(|k| m[(k / 3, k % 3)]).collect();
        let ln = ln_det_hpd_in_place(&mut flat, 3).unwrap();
        let via_eig: f64 = hermitian_eigen(&m).0.iter().map(|v| v.ln()).sum();
        assert!((ln - via_eig).abs() < 1e-12);
        assert!((ln / std::f64::consts::LN_2 - log2_det_hpd(&m)).abs() < 1e-12);
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let (vals, vecs) = hermitian_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let d = CMatrix::from_diagonal(&CVector::from_iterator(2, vals.iter().map(|&v| c(v, 0.0))));
        let back = &vecs * d * vecs.adjoint();
        assert!((back - m).norm() < 1e-12);
    }
}
