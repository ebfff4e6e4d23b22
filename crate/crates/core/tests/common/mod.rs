#![allow(dead_code)]

use lorapre_core::regressor::LowRankMoment;
use lorapre_core::rng::SeededRng;
use lorapre_core::Matrix;
use nalgebra::{DMatrix, DVector};

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Column-major vec(X).
pub fn vec_cm(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.iter().cloned())
}

pub fn rel_err(got: &Matrix, want: &Matrix) -> f64 {
    let d = got.sub(want).unwrap().frobenius_norm();
    d / want.frobenius_norm().max(1e-300)
}

pub fn rel_err_na(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / want.norm().max(1e-300)
}

pub fn orthonormal(rng: &mut SeededRng, n: usize, k: usize) -> DMatrix<f64> {
    let g = to_na(&rng.normal_matrix(n, k, 1.0));
    g.qr().q().columns(0, k).into_owned()
}

/// `p x q` matrix with singular values spread over `[scale/cond, scale]`.
pub fn conditioned(rng: &mut SeededRng, p: usize, q: usize, cond: f64, scale: f64) -> Matrix {
    let k = p.min(q);
    let u = orthonormal(rng, p, k);
    let v = orthonormal(rng, q, k);
    let s: Vec<f64> = (0..k)
        .map(|i| {
            let t = if k == 1 { 0.0 } else if i == 0 { 0.0 } else if i == k - 1 { 1.0 } else { rng.uniform() };
            scale * cond.powf(-t)
        })
        .collect();
    from_na(&(u * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.transpose()))
}

/// Factors with i.i.d. standard normal entries.
pub fn random_state(rng: &mut SeededRng, p: usize, q: usize, r: usize, damping: f64) -> LowRankMoment {
    let b = rng.normal_matrix(p, r, 1.0);
    let a = rng.normal_matrix(r, q, 1.0);
    LowRankMoment::from_factors(b, a, damping).unwrap()
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + h);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - h);
            out.set(i, j, (f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    out
}

/// `A† = Aᵀ(AAᵀ + λI)⁻¹` by explicit inversion.
pub fn right_pinv_oracle(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let r = a.nrows();
    let gram = a * a.transpose() + DMatrix::identity(r, r) * lambda;
    a.transpose() * gram.try_inverse().unwrap()
}

/// `B† = (BᵀB + λI)⁻¹Bᵀ` by explicit inversion.
pub fn left_pinv_oracle(b: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let r = b.ncols();
    let gram = b.transpose() * b + DMatrix::identity(r, r) * lambda;
    gram.try_inverse().unwrap() * b.transpose()
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    to_na(m).singular_values().iter().cloned().collect()
}

/// `V·diag(σ/(σ² + λ))·Uᵀ`, which equals both damped pseudo-inverses.
pub fn damped_pinv_svd(m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = svd.singular_values.map(|s| s / (s * s + lambda));
    v_t.transpose() * DMatrix::from_diagonal(&d) * u.transpose()
}
