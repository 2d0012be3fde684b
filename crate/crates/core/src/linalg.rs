//! Small dense helpers for blocks of node vectors under a diagonal metric.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub(crate) const CZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `sum w a conj(b)`.
#[inline]
pub fn winner(w: &[f64], a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for ((x, y), &m) in a.iter().zip(b).zip(w) {
        re += m * (x.re * y.re + x.im * y.im);
        im += m * (x.im * y.re - x.re * y.im);
    }
    Complex64::new(re, im)
}

/// Real part of the weighted inner product, i.e. the real metric on
/// `C^n = R^{2n}`.
#[inline]
pub fn wdot(w: &[f64], a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut acc = 0.0;
    for ((x, y), &m) in a.iter().zip(b).zip(w) {
        acc += m * (x.re * y.re + x.im * y.im);
    }
    acc
}

#[inline]
pub fn wnorm(w: &[f64], a: &[Complex64]) -> f64 {
    wdot(w, a, a).sqrt()
}

/// `y += alpha x`.
#[inline]
pub fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += alpha x` for a real scalar.
#[inline]
pub fn raxpy(alpha: f64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        yi.re += alpha * xi.re;
        yi.im += alpha * xi.im;
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass against `fixed`
/// (assumed orthonormal) and among `vecs`. Vectors that lose more than a
/// factor `drop_tol` of their norm are discarded.
pub fn orthonormalize(
    w: &[f64],
    fixed: &[Vec<Complex64>],
    vecs: Vec<Vec<Complex64>>,
    drop_tol: f64,
) -> Vec<Vec<Complex64>> {
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(vecs.len());
    for mut v in vecs {
        let start = wnorm(w, &v);
        if start == 0.0 || !start.is_finite() {
            continue;
        }
        for _pass in 0..2 {
            for q in fixed.iter().chain(out.iter()) {
                let c = winner(w, &v, q);
                axpy(-c, q, &mut v);
            }
        }
        let nv = wnorm(w, &v);
        if nv <= drop_tol * start {
            continue;
        }
        let inv = 1.0 / nv;
        v.iter_mut().for_each(|x| *x *= inv);
        out.push(v);
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
pub fn hermitian_eigen(mut h: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = h.nrows();
    // enforce exact Hermitian symmetry before the solver sees it
    for i in 0..n {
        h[(i, i)] = Complex64::new(h[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let a = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            h[(i, j)] = a;
            h[(j, i)] = a.conj();
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `sum_j c_j basis_j`.
pub fn combine(basis: &[Vec<Complex64>], coeffs: impl Iterator<Item = Complex64>) -> Vec<Complex64> {
    let mut out = vec![CZERO; basis[0].len()];
    for (b, c) in basis.iter().zip(coeffs) {
        if c != CZERO {
            axpy(c, b, &mut out);
        }
    }
    out
}
