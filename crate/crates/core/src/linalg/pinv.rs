//! Tikhonov-damped pseudo-inverses of thin factors.
//!
//! Both forms reduce to an `r x r` symmetric positive-definite solve, where `r`
//! is the small dimension of the factor, so the cost stays `O(pr² + r³)`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(s: &Matrix) -> Result<Self> {
        let n = s.rows();
        if s.cols() != n {
            return Err(Error::Shape {
                op: "cholesky",
                left: s.shape(),
                right: s.shape(),
            });
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = s.get(i, j);
                for k in 0..j {
                    acc -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(acc > 0.0) || !acc.is_finite() {
                        return Err(Error::Numeric(format!(
                            "cholesky: non-positive pivot {acc:e} at {i}"
                        )));
                    }
                    l[i * n + i] = acc.sqrt();
                } else {
                    l[i * n + j] = acc / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `S X = rhs` for every column of `rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.n;
        if rhs.rows() != n {
            return Err(Error::Shape {
                op: "cholesky_solve",
                left: (n, n),
                right: rhs.shape(),
            });
        }
        let m = rhs.cols();
        let mut x = rhs.as_slice().to_vec();
        for c in 0..m {
            // forward: L y = b
            for i in 0..n {
                let mut acc = x[i * m + c];
                for k in 0..i {
                    acc -= self.l[i * n + k] * x[k * m + c];
                }
                x[i * m + c] = acc / self.l[i * n + i];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut acc = x[i * m + c];
                for k in i + 1..n {
                    acc -= self.l[k * n + i] * x[k * m + c];
                }
                x[i * m + c] = acc / self.l[i * n + i];
            }
        }
        Matrix::from_vec(n, m, x).map_err(|_| Error::Numeric("cholesky_solve".into()))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!(
            "damping must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

fn damped_gram(gram: Matrix, lambda: f64) -> Matrix {
    let mut s = gram;
    for i in 0..s.rows() {
        s.set(i, i, s.get(i, i) + lambda);
    }
    s
}

/// `Aᵀ (A Aᵀ + λI)⁻¹` for a wide factor `A` of shape `r x q`; returns `q x r`.
pub fn damped_right_pinv(a: &Matrix, lambda: f64) -> Result<Matrix> {
    check_lambda(lambda)?;
    let s = damped_gram(a.matmul_t(a)?, lambda);
    // (S⁻¹ A)ᵀ = Aᵀ S⁻¹ because S is symmetric.
    let x = Cholesky::new(&s)?.solve(a)?;
    Ok(x.transpose())
}

/// `(Bᵀ B + λI)⁻¹ Bᵀ` for a tall factor `B` of shape `p x r`; returns `r x p`.
pub fn damped_left_pinv(b: &Matrix, lambda: f64) -> Result<Matrix> {
    check_lambda(lambda)?;
    let s = damped_gram(b.t_matmul(b)?, lambda);
    Cholesky::new(&s)?.solve(&b.transpose())
}
