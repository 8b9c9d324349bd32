//! Small dense complex linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// `Re(h^H W h)`.
pub fn quad_form(w: &CMat, h: &CVec) -> f64 {
    let n = h.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..n {
            col += h[i].conj() * w[(i, j)];
        }
        acc += col * h[j];
    }
    acc.re
}

/// `Re(v^T W v^*)`, the power radiated by covariance `W` towards steering vector `v`.
pub fn radiated_power(w: &CMat, v: &CVec) -> f64 {
    let n = v.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..n {
            col += v[i] * w[(i, j)];
        }
        acc += col * v[j].conj();
    }
    acc.re
}

pub fn trace_re(w: &CMat) -> f64 {
    (0..w.nrows()).map(|i| w[(i, i)].re).sum()
}

pub fn hermitian_part(w: &CMat) -> CMat {
    (w + w.adjoint()).scale(0.5)
}

pub fn outer(w: &CVec) -> CMat {
    w * w.adjoint()
}

/// Eigen-decomposition of the Hermitian part of `w`, eigenvalues ascending.
pub fn hermitian_eigen(w: &CMat) -> (Vec<f64>, CMat) {
    let n = w.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(w).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(w: &CMat) -> f64 {
    hermitian_eigen(w).0.first().copied().unwrap_or(0.0)
}

/// Hermitian square root of a PSD matrix; negative eigenvalues are clipped.
pub fn psd_sqrt(w: &CMat) -> CMat {
    let (values, vectors) = hermitian_eigen(w);
    let n = values.len();
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    &scaled * vectors.adjoint()
}

/// Symmetrize and clip eigenvalues in `[-tol*trace, 0)` to zero. Returns `None`
/// when an eigenvalue lies below the tolerance.
pub fn repair_psd(w: &CMat, rel_tol: f64) -> Option<CMat> {
    let (values, vectors) = hermitian_eigen(w);
    let trace: f64 = values.iter().sum::<f64>().max(0.0);
    let floor = -rel_tol * trace;
    if values.iter().any(|&v| v < floor - f64::MIN_POSITIVE) {
        return None;
    }
    if values.iter().all(|&v| v >= 0.0) {
        return Some(hermitian_part(w));
    }
    let n = values.len();
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let s = Complex64::new(lambda.max(0.0), 0.0);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    Some(hermitian_part(&(&scaled * vectors.adjoint())))
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
