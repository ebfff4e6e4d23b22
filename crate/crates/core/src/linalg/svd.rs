//! One-sided Jacobi SVD for desk-scale matrices.
//!
//! Used as a reference oracle (best rank-r approximations, spectral norms,
//! Newton–Schulz validation); the optimizers never call it on the hot path.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Largest side accepted by [`svd_small`].
pub const SVD_MAX_DIM: usize = 512;
/// Sweep budget before reporting non-convergence.
pub const SVD_MAX_SWEEPS: usize = 80;

const ORTH_TOL: f64 = 1e-15;

/// Thin SVD `x = u · diag(s) · vᵀ` with `k = min(p, q)` columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        self.truncated(self.singular_values.len())
    }

    /// Best rank-`r` approximation `u_r · diag(s_r) · v_rᵀ`.
    pub fn truncated(&self, r: usize) -> Matrix {
        let (p, q) = (self.u.rows(), self.v.rows());
        let r = r.min(self.singular_values.len());
        Matrix::from_fn(p, q, |i, j| {
            (0..r)
                .map(|k| self.u.get(i, k) * self.singular_values[k] * self.v.get(j, k))
                .sum()
        })
    }

    /// Frobenius distance to the best rank-`r` approximation: `√(Σ_{i>r} σᵢ²)`.
    pub fn truncation_error(&self, r: usize) -> f64 {
        self.singular_values
            .iter()
            .skip(r)
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

/// Thin SVD by one-sided Jacobi rotations on the smaller Gram dimension.
///
/// Singular values are sorted non-increasing and each left singular vector has
/// a non-negative first significant entry.
pub fn svd_small(x: &Matrix) -> Result<SvdResult> {
    let (p, q) = x.shape();
    if p > SVD_MAX_DIM || q > SVD_MAX_DIM {
        return Err(Error::Argument(format!(
            "svd_small supports at most {SVD_MAX_DIM} per side, got {p}x{q}"
        )));
    }
    let mut out = if p >= q {
        jacobi_tall(x)?
    } else {
        let t = jacobi_tall(&x.transpose())?;
        SvdResult {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        }
    };
    normalize_signs(&mut out);
    Ok(out)
}

/// Largest singular value.
pub fn spectral_norm(x: &Matrix) -> Result<f64> {
    Ok(svd_small(x)?.singular_values[0])
}

fn jacobi_tall(x: &Matrix) -> Result<SvdResult> {
    let (p, q) = x.shape();
    // column-major working copies
    let mut w: Vec<Vec<f64>> = (0..q).map(|j| x.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..q)
        .map(|j| (0..q).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = q == 1;
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q {
            for j in i + 1..q {
                let alpha: f64 = w[i].iter().map(|a| a * a).sum();
                let beta: f64 = w[j].iter().map(|a| a * a).sum();
                let gamma: f64 = w[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum();
                if gamma == 0.0 || gamma.abs() <= ORTH_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "svd_small: no convergence after {SVD_MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = w
        .iter()
        .map(|c| c.iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let s_max = norms[order[0]];
    let negligible = s_max * 1e-13 * (p as f64);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut deficient = Vec::new();
    for (k, &idx) in order.iter().enumerate() {
        let n = norms[idx];
        if n > negligible && n > 0.0 {
            u_cols.push(w[idx].iter().map(|a| a / n).collect());
        } else {
            u_cols.push(vec![0.0; p]);
            deficient.push(k);
        }
    }
    for &k in &deficient {
        u_cols[k] = complete_basis(&u_cols, k, p);
    }

    let singular_values: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let u = Matrix::from_fn(p, q, |i, k| u_cols[k][i]);
    let vm = Matrix::from_fn(q, q, |i, k| v[order[k]][i]);
    Ok(SvdResult {
        u,
        singular_values,
        v: vm,
    })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (a, b) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Unit vector orthogonal to every other column, found by Gram–Schmidt on the
/// standard basis vectors in order.
fn complete_basis(cols: &[Vec<f64>], skip: usize, p: usize) -> Vec<f64> {
    for e in 0..p {
        let mut cand = vec![0.0; p];
        cand[e] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let d: f64 = cand.iter().zip(c).map(|(a, b)| a * b).sum();
                cand.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = cand.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            return cand.into_iter().map(|a| a / n).collect();
        }
    }
    unreachable!("a p-dimensional space always has room for a completion vector")
}

fn normalize_signs(svd: &mut SvdResult) {
    let (p, k) = svd.u.shape();
    let q = svd.v.rows();
    for c in 0..k {
        let first = (0..p)
            .map(|i| svd.u.get(i, c))
            .find(|x| x.abs() > 1e-12)
            .unwrap_or(0.0);
        if first < 0.0 {
            for i in 0..p {
                svd.u.set(i, c, -svd.u.get(i, c));
            }
            for i in 0..q {
                svd.v.set(i, c, -svd.v.get(i, c));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input() {
        let svd = svd_small(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(svd.singular_values, vec![3.0, 1.0]);
        assert_eq!(svd.u, Matrix::identity(2));
        assert_eq!(svd.v, Matrix::identity(2));
    }

    #[test]
    fn diagonal_is_sorted() {
        let svd = svd_small(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(svd.singular_values, vec![3.0, 1.0]);
        assert_eq!(svd.u.get(1, 0), 1.0);
    }

    #[test]
    fn rank_one_outer_product() {
        // ‖u‖ = 2, ‖v‖ = 1
        let u = [2.0 / 3.0_f64.sqrt(); 3];
        let v = [0.6, 0.8];
        let x = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let svd = svd_small(&x).unwrap();
        assert!((svd.singular_values[0] - 2.0).abs() < 1e-14);
        assert!(svd.singular_values[1].abs() < 1e-14);
        let gram = svd.u.t_matmul(&svd.u).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_matrix() {
        let svd = svd_small(&Matrix::zeros(3, 4)).unwrap();
        assert!(svd.singular_values.iter().all(|&s| s == 0.0));
        let g = svd.u.t_matmul(&svd.u).unwrap();
        assert!(g.sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn rejects_oversized_input() {
        assert!(svd_small(&Matrix::zeros(SVD_MAX_DIM + 1, 2)).is_err());
    }

    #[test]
    fn sign_convention_on_left_vectors() {
        let x = Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, -2.0], &[0.0, 0.0]]).unwrap();
        let svd = svd_small(&x).unwrap();
        for c in 0..2 {
            let first = svd.u.col(c).into_iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
        assert!(svd.reconstruct().sub(&x).unwrap().frobenius_norm() < 1e-14);
    }
}
