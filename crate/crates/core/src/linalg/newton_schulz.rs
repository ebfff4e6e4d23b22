//! Quintic Newton–Schulz orthogonalization used by Muon.
//!
//! Each step applies `X ← a·X + b·(XXᵀ)X + c·(XXᵀ)²X`, which acts on every
//! singular value `σ` as the odd polynomial `aσ + bσ³ + cσ⁵` while leaving the
//! singular vectors unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Guard added to the Frobenius norm before normalizing.
pub const NS_NORM_GUARD: f64 = 1e-12;
pub const NS_DEFAULT_ITERATIONS: usize = 5;

/// Fixed quintic coefficients popularised by the original Muon implementation.
pub const MUON_QUINTIC: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Per-step coefficients of a minimax-tuned quintic schedule. Steps beyond the
/// table reuse the last row.
pub const POLAR_EXPRESS: [(f64, f64, f64); 5] = [
    (8.157, -22.483, 15.879),
    (4.043, -2.809, 0.500),
    (3.892, -2.772, 0.506),
    (3.286, -2.368, 0.464),
    (2.347, -1.710, 0.423),
];

/// Coefficient schedule for the quintic iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsSchedule {
    /// Varying coefficients; five steps map normalized singular values in
    /// `[1e-3, 1]` into roughly `[0.86, 1.14]`.
    #[default]
    PolarExpress,
    /// The single fixed triple [`MUON_QUINTIC`]. It oscillates and lands some
    /// singular values as low as ~0.68 after five steps.
    MuonQuintic,
}

impl NsSchedule {
    pub fn coefficients(self, step: usize) -> (f64, f64, f64) {
        match self {
            NsSchedule::PolarExpress => POLAR_EXPRESS[step.min(POLAR_EXPRESS.len() - 1)],
            NsSchedule::MuonQuintic => MUON_QUINTIC,
        }
    }
}

/// Approximate orthogonal polar factor of `m` with the default schedule.
pub fn newton_schulz5(m: &Matrix, iterations: usize) -> Result<Matrix> {
    newton_schulz(m, iterations, NsSchedule::default())
}

pub fn newton_schulz(m: &Matrix, iterations: usize, schedule: NsSchedule) -> Result<Matrix> {
    if iterations == 0 {
        return Err(Error::Argument("newton_schulz needs at least one iteration".into()));
    }
    let tall = m.rows() > m.cols();
    let norm = m.frobenius_norm();
    let mut x = if tall { m.transpose() } else { m.clone() }.scale(1.0 / (norm + NS_NORM_GUARD));
    for step in 0..iterations {
        let (a, b, c) = schedule.coefficients(step);
        let gram = x.matmul_t(&x)?;
        let poly = gram.lin_comb(b, &gram.matmul(&gram)?, c)?;
        x = x.lin_comb(a, &poly.matmul(&x)?, 1.0)?;
    }
    x.ensure_finite("newton_schulz")?;
    Ok(if tall { x.transpose() } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_poly(schedule: NsSchedule, x0: f64, iterations: usize) -> f64 {
        (0..iterations).fold(x0, |x, k| {
            let (a, b, c) = schedule.coefficients(k);
            a * x + b * x.powi(3) + c * x.powi(5)
        })
    }

    #[test]
    fn zero_maps_to_zero() {
        let out = newton_schulz5(&Matrix::zeros(4, 4), 5).unwrap();
        assert_eq!(out, Matrix::zeros(4, 4));
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(newton_schulz5(&Matrix::identity(2), 0).is_err());
    }

    #[test]
    fn diagonal_input_follows_scalar_polynomial() {
        let m = Matrix::diag(&[3.0, 1.0, 0.5]);
        let norm = m.frobenius_norm() + NS_NORM_GUARD;
        for schedule in [NsSchedule::PolarExpress, NsSchedule::MuonQuintic] {
            let out = newton_schulz(&m, 5, schedule).unwrap();
            for (i, s) in [3.0, 1.0, 0.5].into_iter().enumerate() {
                let expected = scalar_poly(schedule, s / norm, 5);
                assert!((out.get(i, i) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn polar_express_scalar_range() {
        for k in 0..=10_000 {
            let x0 = 1e-3 + (1.0 - 1e-3) * k as f64 / 10_000.0;
            let y = scalar_poly(NsSchedule::PolarExpress, x0, 5);
            assert!((0.7..=1.3).contains(&y), "x0={x0} -> {y}");
        }
    }

    #[test]
    fn fixed_quintic_leaves_the_band() {
        let y = scalar_poly(NsSchedule::MuonQuintic, 0.55, 5);
        assert!(y < 0.7);
    }
}
