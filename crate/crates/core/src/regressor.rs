//! Momentum as an online low-rank linear regressor.
//!
//! An EMA `m ← βm + (1−β)g` is one gradient step of size `1−β` on
//! `½‖m − g‖²_F`. Factoring `m = B·A` and taking a Newton step on
//! `½‖BA − g‖²_F` in each factor gives the closed-form updates
//!
//! ```text
//! B ← (1−γ)·B + γ·g·A†        A† = Aᵀ(AAᵀ + λI)⁻¹
//! A ← (1−γ)·A + γ·B†·g        B† = (BᵀB + λI)⁻¹Bᵀ
//! ```
//!
//! Both factors are advanced from the pre-update pair. With the coupling
//! `(1−γ)² = β` a zero gradient decays `BA` by exactly `β`, matching the dense EMA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{abs_elementwise, damped_left_pinv, damped_right_pinv, hadamard_square, Matrix};
use crate::rng::SeededRng;

/// Default Tikhonov damping for the factor pseudo-inverses.
pub const DEFAULT_DAMPING: f64 = 1e-8;
/// Standard deviation of the random right-factor initialization.
pub const INIT_STD: f64 = 0.02;

/// Which moment a coupling is derived for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentOrder {
    /// `BA` tracks `g`; `(1−γ)² = β`.
    First,
    /// `BA` tracks `|g|` and is squared afterwards; `(1−γ)⁴ = β`.
    Second,
}

/// Factor learning rate `gamma` matched to an EMA decay `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub beta: f64,
    pub gamma: f64,
}

pub fn coupling_from_beta(beta: f64, order: MomentOrder) -> Result<Coupling> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Argument(format!("beta must lie in [0, 1), got {beta}")));
    }
    let gamma = match order {
        MomentOrder::First => 1.0 - beta.sqrt(),
        MomentOrder::Second => 1.0 - beta.powf(0.25),
    };
    Ok(Coupling { beta, gamma })
}

/// A momentum matrix stored as `b (p x r) · a (r x q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankMoment {
    b: Matrix,
    a: Matrix,
    damping: f64,
}

/// `B = 0`, `A ~ N(0, 0.02²)` from `seed`.
pub fn init_low_rank(p: usize, q: usize, r: usize, damping: f64, seed: u64) -> Result<LowRankMoment> {
    if r == 0 || r > p.min(q) {
        return Err(Error::Argument(format!(
            "rank {r} must lie in 1..={} for a {p}x{q} moment",
            p.min(q)
        )));
    }
    let mut rng = SeededRng::new(seed);
    let a = rng.normal_matrix(r, q, INIT_STD);
    LowRankMoment::from_factors(Matrix::zeros(p, r), a, damping)
}

impl LowRankMoment {
    pub fn from_factors(b: Matrix, a: Matrix, damping: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::Shape {
                op: "LowRankMoment",
                left: b.shape(),
                right: a.shape(),
            });
        }
        if b.cols() > b.rows().min(a.cols()) {
            return Err(Error::Argument(format!(
                "rank {} exceeds min({}, {})",
                b.cols(),
                b.rows(),
                a.cols()
            )));
        }
        if !(damping > 0.0) || !damping.is_finite() {
            return Err(Error::Argument(format!("damping must be positive, got {damping}")));
        }
        b.ensure_finite("LowRankMoment factor B")?;
        a.ensure_finite("LowRankMoment factor A")?;
        Ok(Self { b, a, damping })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// Shape `(p, q)` of the represented momentum.
    pub fn shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    /// Stored entries, `(p + q)·r`.
    pub fn state_entries(&self) -> usize {
        self.b.len() + self.a.len()
    }

    /// `B·A`.
    pub fn reconstruct(&self) -> Matrix {
        self.b
            .matmul(&self.a)
            .expect("factor shapes are validated at construction")
    }

    /// `A† = Aᵀ(AAᵀ + λI)⁻¹`, shape `q x r`.
    pub fn a_pinv(&self) -> Result<Matrix> {
        damped_right_pinv(&self.a, self.damping)
    }

    /// `B† = (BᵀB + λI)⁻¹Bᵀ`, shape `r x p`.
    pub fn b_pinv(&self) -> Result<Matrix> {
        damped_left_pinv(&self.b, self.damping)
    }

    fn check_target(&self, g: &Matrix, op: &'static str) -> Result<()> {
        if g.shape() != self.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: g.shape(),
            });
        }
        Ok(())
    }

    /// Shared Newton step: `B ← (1−γ)B + γs·target·A†`, `A ← (1−γ)A + γs·B†·target`.
    fn factor_step(&self, target: &Matrix, gamma: f64, injection: f64, label: &str) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Argument(format!("{label}: gamma must lie in (0, 1], got {gamma}")));
        }
        let keep = 1.0 - gamma;
        let inject = gamma * injection;
        let numeric = |factor: &str| Error::Numeric(format!("{label} factor {factor}"));

        let a_pinv = self.a_pinv().map_err(|_| numeric("A"))?;
        let b_pinv = self.b_pinv().map_err(|_| numeric("B"))?;
        let b_target = target.matmul(&a_pinv).map_err(|_| numeric("B"))?;
        let a_target = b_pinv.matmul(target).map_err(|_| numeric("A"))?;
        let b = self.b.lin_comb(keep, &b_target, inject).map_err(|_| numeric("B"))?;
        let a = self.a.lin_comb(keep, &a_target, inject).map_err(|_| numeric("A"))?;
        Ok(Self {
            b,
            a,
            damping: self.damping,
        })
    }
}

/// `½‖BA − g‖²_F`.
pub fn regression_loss(state: &LowRankMoment, g: &Matrix) -> Result<f64> {
    state.check_target(g, "regression_loss")?;
    let r = state.reconstruct().sub(g)?;
    Ok(0.5 * r.dot(&r)?)
}

/// `(∂L/∂B, ∂L/∂A) = ((BA − g)Aᵀ, Bᵀ(BA − g))`.
pub fn regression_grads(state: &LowRankMoment, g: &Matrix) -> Result<(Matrix, Matrix)> {
    shifted_grads(state, g, 0.0)
}

/// Muon objective `½‖BA − g‖²_F − μ/(1−μ)·⟨BA, g⟩_F`.
pub fn shifted_loss(state: &LowRankMoment, g: &Matrix, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let m = state.reconstruct();
    Ok(regression_loss(state, g)? - mu / (1.0 - mu) * m.dot(g)?)
}

/// Gradients of [`shifted_loss`]; `mu = 0` gives [`regression_grads`].
pub fn shifted_grads(state: &LowRankMoment, g: &Matrix, mu: f64) -> Result<(Matrix, Matrix)> {
    check_mu(mu)?;
    state.check_target(g, "regression_grads")?;
    // (BA − g) − μ/(1−μ)·g = BA − g/(1−μ)
    let resid = state.reconstruct().lin_comb(1.0, g, -1.0 / (1.0 - mu))?;
    let grad_b = resid.matmul_t(state.a())?;
    let grad_a = state.b().t_matmul(&resid)?;
    Ok((grad_b, grad_a))
}

/// Newton directions `d_B = B − s·g·A†`, `d_A = A − s·B†·g` with `s = 1/(1−μ)`.
///
/// The factor updates are `x ← x − γ·d_x`.
pub fn newton_directions(state: &LowRankMoment, g: &Matrix, mu: f64) -> Result<(Matrix, Matrix)> {
    check_mu(mu)?;
    state.check_target(g, "newton_directions")?;
    let s = 1.0 / (1.0 - mu);
    let d_b = state.b().lin_comb(1.0, &g.matmul(&state.a_pinv()?)?, -s)?;
    let d_a = state.a().lin_comb(1.0, &state.b_pinv()?.matmul(g)?, -s)?;
    Ok((d_b, d_a))
}

fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::Argument(format!("momentum must lie in [0, 1), got {mu}")));
    }
    Ok(())
}

/// Newton step on `½‖BA − g‖²_F` for the first moment.
pub fn first_moment_update(state: &LowRankMoment, g: &Matrix, gamma1: f64) -> Result<LowRankMoment> {
    state.check_target(g, "first_moment_update")?;
    state.factor_step(g, gamma1, 1.0, "first moment")
}

/// Newton step on `½‖BA − |g|‖²_F`; the represented second moment is `(BA)∘(BA)`.
pub fn second_moment_update(state: &LowRankMoment, g: &Matrix, gamma2: f64) -> Result<LowRankMoment> {
    state.check_target(g, "second_moment_update")?;
    state.factor_step(&abs_elementwise(g), gamma2, 1.0, "second moment")
}

/// Newton step on the Muon objective; the injection term is scaled by `1/(1−μ)`.
pub fn muon_moment_update(
    state: &LowRankMoment,
    g: &Matrix,
    mu: f64,
    gamma1: f64,
) -> Result<LowRankMoment> {
    check_mu(mu)?;
    state.check_target(g, "muon_moment_update")?;
    state.factor_step(g, gamma1, 1.0 / (1.0 - mu), "muon moment")
}

pub fn reconstruct(state: &LowRankMoment) -> Matrix {
    state.reconstruct()
}

/// `β₁·BA + (1−β₁)·g` from the factors before they advance.
pub fn effective_first_moment(state: &LowRankMoment, g: &Matrix, beta1: f64) -> Result<Matrix> {
    state.check_target(g, "effective_first_moment")?;
    state.reconstruct().lin_comb(beta1, g, 1.0 - beta1)
}

/// `β₂·(BA)∘² + (1−β₂)·g∘²`; non-negative entry-wise.
pub fn effective_second_moment(state: &LowRankMoment, g: &Matrix, beta2: f64) -> Result<Matrix> {
    state.check_target(g, "effective_second_moment")?;
    hadamard_square(&state.reconstruct()).lin_comb(beta2, &hadamard_square(g), 1.0 - beta2)
}

/// `P_B·g + g·P_A`, the part of `g` seen by the column and row spaces of the factors.
pub fn subspace_projection(state: &LowRankMoment, g: &Matrix) -> Result<Matrix> {
    state.check_target(g, "subspace_projection")?;
    let col = state.b().matmul(&state.b_pinv()?.matmul(g)?)?;
    let row = g.matmul(&state.a_pinv()?)?.matmul(state.a())?;
    col.add(&row)
}

/// Subspace residual `‖g − (P_B·g + g·P_A)‖_F`.
pub fn subspace_residual(state: &LowRankMoment, g: &Matrix) -> Result<f64> {
    Ok(g.sub(&subspace_projection(state, g)?)?.frobenius_norm())
}

/// `‖g − P_B·g·P_A‖_F`: how much of `g` lies outside both tracked subspaces at once.
///
/// Unlike [`subspace_residual`] this vanishes when `g` is fully captured; the
/// sum `P_B·g + g·P_A` counts such a `g` twice, leaving a residual of `‖g‖_F`.
pub fn capture_residual(state: &LowRankMoment, g: &Matrix) -> Result<f64> {
    state.check_target(g, "capture_residual")?;
    let inner = state.b_pinv()?.matmul(g)?.matmul(&state.a_pinv()?)?;
    let two_sided = state.b().matmul(&inner)?.matmul(state.a())?;
    Ok(g.sub(&two_sided)?.frobenius_norm())
}

/// Quadratic interaction term `g·A†·B†·g` (`p x q`).
pub fn quadratic_interaction(state: &LowRankMoment, g: &Matrix) -> Result<Matrix> {
    state.check_target(g, "quadratic_interaction")?;
    g.matmul(&state.a_pinv()?)?.matmul(&state.b_pinv()?)?.matmul(g)
}

/// `P_A = A†A` (`q x q`).
pub fn projection_row(state: &LowRankMoment) -> Result<Matrix> {
    state.a_pinv()?.matmul(state.a())
}

/// `P_B = BB†` (`p x p`).
pub fn projection_col(state: &LowRankMoment) -> Result<Matrix> {
    state.b().matmul(&state.b_pinv()?)
}

/// Full-matrix EMA, the exact reference for the factored moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMoment {
    pub value: Matrix,
}

impl DenseMoment {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            value: Matrix::zeros(p, q),
        }
    }
}

/// `value ← β·value + (1−β)·u` with `u = g` or `u = g∘²`.
pub fn dense_ema_update(state: &DenseMoment, g: &Matrix, beta: f64, squared: bool) -> Result<DenseMoment> {
    let value = if squared {
        state.value.lin_comb(beta, &hadamard_square(g), 1.0 - beta)?
    } else {
        state.value.lin_comb(beta, g, 1.0 - beta)?
    };
    Ok(DenseMoment { value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_state(p: usize, q: usize, r: usize, damping: f64, seed: u64) -> LowRankMoment {
        let mut rng = SeededRng::new(seed);
        LowRankMoment::from_factors(rng.normal_matrix(p, r, 1.0), rng.normal_matrix(r, q, 1.0), damping)
            .unwrap()
    }

    #[test]
    fn coupling_values() {
        let c = coupling_from_beta(0.0, MomentOrder::First).unwrap();
        assert_eq!(c.gamma, 1.0);
        let c = coupling_from_beta(0.9, MomentOrder::First).unwrap();
        assert!((c.gamma - 0.051_316_7).abs() < 1e-7);
        assert!(((1.0 - c.gamma).powi(2) - 0.9).abs() < 1e-15);
        let c = coupling_from_beta(0.95, MomentOrder::Second).unwrap();
        assert!((c.gamma - 0.012_741_5).abs() < 1e-7);
        assert!(((1.0 - c.gamma).powi(4) - 0.95).abs() < 1e-15);
        for bad in [-0.1, 1.0, 1.2, f64::NAN] {
            assert!(coupling_from_beta(bad, MomentOrder::First).is_err());
        }
    }

    #[test]
    fn init_is_zero_b_and_deterministic() {
        let s = init_low_rank(4, 4, 2, DEFAULT_DAMPING, 42).unwrap();
        assert_eq!(s.b(), &Matrix::zeros(4, 2));
        assert_eq!(s.reconstruct(), Matrix::zeros(4, 4));
        let t = init_low_rank(4, 4, 2, DEFAULT_DAMPING, 42).unwrap();
        assert_eq!(s.a(), t.a());
        assert_eq!(s.state_entries(), (4 + 4) * 2);
    }

    #[test]
    fn init_rejects_bad_rank() {
        assert!(init_low_rank(4, 3, 4, 1e-8, 0).is_err());
        assert!(init_low_rank(4, 3, 0, 1e-8, 0).is_err());
        assert!(init_low_rank(4, 3, 3, 1e-8, 0).is_ok());
    }

    #[test]
    fn loss_and_grads_at_exact_fit() {
        let s = random_state(5, 4, 2, 1e-8, 3);
        let g = s.reconstruct();
        assert!(regression_loss(&s, &g).unwrap().abs() < 1e-24);
        let (gb, ga) = regression_grads(&s, &g).unwrap();
        assert!(gb.frobenius_norm() < 1e-12 && ga.frobenius_norm() < 1e-12);
    }

    #[test]
    fn loss_and_grads_with_zero_b() {
        let mut rng = SeededRng::new(5);
        let a = rng.normal_matrix(2, 4, 1.0);
        let g = rng.normal_matrix(5, 4, 1.0);
        let s = LowRankMoment::from_factors(Matrix::zeros(5, 2), a.clone(), 1e-8).unwrap();
        let half = 0.5 * g.dot(&g).unwrap();
        assert!((regression_loss(&s, &g).unwrap() - half).abs() < 1e-12);
        let (gb, ga) = regression_grads(&s, &g).unwrap();
        assert_eq!(gb, g.matmul_t(&a).unwrap().scale(-1.0));
        assert_eq!(ga, Matrix::zeros(2, 4));
    }

    #[test]
    fn zero_gradient_decay() {
        let s = random_state(6, 5, 2, 1e-8, 11);
        let c = coupling_from_beta(0.9, MomentOrder::First).unwrap();
        let g = Matrix::zeros(6, 5);
        let next = first_moment_update(&s, &g, c.gamma).unwrap();
        assert_eq!(next.b(), &s.b().scale(1.0 - c.gamma));
        assert_eq!(next.a(), &s.a().scale(1.0 - c.gamma));
        let expected = s.reconstruct().scale(0.9);
        let err = next.reconstruct().sub(&expected).unwrap().frobenius_norm();
        assert!(err <= 1e-12 * expected.frobenius_norm());
    }

    #[test]
    fn identity_right_factor_case() {
        let mut rng = SeededRng::new(2);
        let g = rng.normal_matrix(5, 3, 1.0);
        let b = rng.normal_matrix(5, 3, 1.0);
        let s = LowRankMoment::from_factors(b.clone(), Matrix::identity(3), 1e-12).unwrap();
        let next = first_moment_update(&s, &g, 1.0).unwrap();
        assert!(next.b().sub(&g).unwrap().frobenius_norm() < 1e-10);
        let expected_a = damped_left_pinv(&b, 1e-12).unwrap().matmul(&g).unwrap();
        assert!(next.a().sub(&expected_a).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn second_moment_is_first_moment_on_abs() {
        let s = random_state(4, 6, 2, 1e-8, 8);
        let g = SeededRng::new(9).normal_matrix(4, 6, 1.0);
        let via_second = second_moment_update(&s, &g, 0.3).unwrap();
        let via_first = first_moment_update(&s, &abs_elementwise(&g), 0.3).unwrap();
        assert_eq!(via_second, via_first);
    }

    #[test]
    fn muon_with_zero_momentum_is_first_moment() {
        let s = random_state(6, 4, 2, 1e-8, 12);
        let g = SeededRng::new(13).normal_matrix(6, 4, 1.0);
        assert_eq!(
            muon_moment_update(&s, &g, 0.0, 0.2).unwrap(),
            first_moment_update(&s, &g, 0.2).unwrap()
        );
    }

    #[test]
    fn update_argument_checks() {
        let s = random_state(4, 4, 2, 1e-8, 1);
        let g = Matrix::zeros(4, 4);
        assert!(matches!(first_moment_update(&s, &g, 0.0), Err(Error::Argument(_))));
        assert!(matches!(first_moment_update(&s, &g, 1.5), Err(Error::Argument(_))));
        assert!(matches!(muon_moment_update(&s, &g, 1.0, 0.5), Err(Error::Argument(_))));
        assert!(matches!(
            first_moment_update(&s, &Matrix::zeros(4, 3), 0.5),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn non_finite_update_names_factor() {
        let b = Matrix::filled(2, 1, 1e200);
        let a = Matrix::filled(1, 2, 1.0);
        let s = LowRankMoment::from_factors(b, a, 1e-8).unwrap();
        let g = Matrix::filled(2, 2, 1e200);
        match first_moment_update(&s, &g, 0.5) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("factor"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn effective_moments_fresh_state() {
        let s = init_low_rank(3, 4, 2, 1e-8, 0).unwrap();
        let g = SeededRng::new(4).normal_matrix(3, 4, 1.0);
        assert_eq!(effective_first_moment(&s, &g, 0.9).unwrap(), g.scale(1.0 - 0.9));
        let v = effective_second_moment(&s, &g, 0.95).unwrap();
        assert_eq!(v, hadamard_square(&g).scale(1.0 - 0.95));
        assert!(v.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn effective_first_moment_fixed_point() {
        let s = random_state(4, 3, 2, 1e-8, 21);
        let m = s.reconstruct();
        let out = effective_first_moment(&s, &m, 0.9).unwrap();
        assert!(out.sub(&m).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn effective_second_moment_zero_gradient() {
        let s = random_state(4, 3, 2, 1e-8, 22);
        let v = effective_second_moment(&s, &Matrix::zeros(4, 3), 0.95).unwrap();
        assert_eq!(v, hadamard_square(&s.reconstruct()).scale(0.95));
    }

    #[test]
    fn dense_ema_basics() {
        let g = SeededRng::new(1).normal_matrix(3, 3, 1.0);
        let first = dense_ema_update(&DenseMoment::zeros(3, 3), &g, 0.9, false).unwrap();
        assert_eq!(first.value, g.scale(1.0 - 0.9));
        let fixed = dense_ema_update(&DenseMoment { value: g.clone() }, &g, 0.9, false).unwrap();
        assert!(fixed.value.sub(&g).unwrap().max_abs() < 1e-15);
        let sq = dense_ema_update(&DenseMoment::zeros(3, 3), &g, 0.5, true).unwrap();
        assert_eq!(sq.value, hadamard_square(&g).scale(0.5));
    }

    #[test]
    fn projections_trivial_cases() {
        let s = LowRankMoment::from_factors(Matrix::zeros(4, 3), Matrix::identity(3), 1e-12).unwrap();
        let pa = projection_row(&s).unwrap();
        assert!(pa.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-10);
        assert_eq!(projection_col(&s).unwrap(), Matrix::zeros(4, 4));
    }

    #[test]
    fn cheap_projection_matches_explicit() {
        let s = random_state(6, 5, 2, 1e-6, 31);
        let g = SeededRng::new(32).normal_matrix(6, 5, 1.0);
        let explicit = projection_col(&s)
            .unwrap()
            .matmul(&g)
            .unwrap()
            .add(&g.matmul(&projection_row(&s).unwrap()).unwrap())
            .unwrap();
        let cheap = subspace_projection(&s, &g).unwrap();
        assert!(explicit.sub(&cheap).unwrap().frobenius_norm() < 1e-12);
    }
}
