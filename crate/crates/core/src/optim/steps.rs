//! Single-parameter optimizer steps. Each takes the current slot and returns the
//! next parameter value together with the advanced slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hadamard_square, newton_schulz, Matrix};
use crate::optim::config::{AdamConfig, EpsPlacement, MuonConfig};
use crate::regressor::{
    effective_first_moment, effective_second_moment, first_moment_update, init_low_rank,
    muon_moment_update, second_moment_update, LowRankMoment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    DenseAdam,
    DenseMuon,
    LowRankAdam,
    LowRankMuon,
}

impl SlotKind {
    pub fn is_low_rank(self) -> bool {
        matches!(self, SlotKind::LowRankAdam | SlotKind::LowRankMuon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotState {
    DenseAdam { m: Matrix, v: Matrix },
    DenseMuon { m: Matrix },
    LowRankAdam { m: LowRankMoment, v: LowRankMoment },
    LowRankMuon { m: LowRankMoment },
}

/// Per-parameter optimizer state plus its step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSlot {
    pub step: u64,
    pub state: SlotState,
}

impl OptimizerSlot {
    pub fn dense_adam(p: usize, q: usize) -> Self {
        Self {
            step: 0,
            state: SlotState::DenseAdam {
                m: Matrix::zeros(p, q),
                v: Matrix::zeros(p, q),
            },
        }
    }

    pub fn dense_muon(p: usize, q: usize) -> Self {
        Self {
            step: 0,
            state: SlotState::DenseMuon { m: Matrix::zeros(p, q) },
        }
    }

    /// Two independent factor pairs seeded from `seeds.0` and `seeds.1`.
    pub fn low_rank_adam(p: usize, q: usize, rank: usize, damping: f64, seeds: (u64, u64)) -> Result<Self> {
        Ok(Self {
            step: 0,
            state: SlotState::LowRankAdam {
                m: init_low_rank(p, q, rank, damping, seeds.0)?,
                v: init_low_rank(p, q, rank, damping, seeds.1)?,
            },
        })
    }

    pub fn low_rank_muon(p: usize, q: usize, rank: usize, damping: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            step: 0,
            state: SlotState::LowRankMuon {
                m: init_low_rank(p, q, rank, damping, seed)?,
            },
        })
    }

    pub fn kind(&self) -> SlotKind {
        match self.state {
            SlotState::DenseAdam { .. } => SlotKind::DenseAdam,
            SlotState::DenseMuon { .. } => SlotKind::DenseMuon,
            SlotState::LowRankAdam { .. } => SlotKind::LowRankAdam,
            SlotState::LowRankMuon { .. } => SlotKind::LowRankMuon,
        }
    }

    /// Number of stored optimizer-state entries.
    pub fn state_entries(&self) -> usize {
        match &self.state {
            SlotState::DenseAdam { m, v } => m.len() + v.len(),
            SlotState::DenseMuon { m } => m.len(),
            SlotState::LowRankAdam { m, v } => m.state_entries() + v.state_entries(),
            SlotState::LowRankMuon { m } => m.state_entries(),
        }
    }
}

fn wrong_slot(expected: SlotKind, got: SlotKind) -> Error {
    Error::Argument(format!("expected a {expected:?} slot, got {got:?}"))
}

fn check_shapes(theta: &Matrix, g: &Matrix, op: &'static str) -> Result<()> {
    if theta.shape() != g.shape() {
        return Err(Error::Shape {
            op,
            left: theta.shape(),
            right: g.shape(),
        });
    }
    Ok(())
}

/// Bias-corrected normalized Adam direction `m̂ / √(v̂ + ε)` (or `m̂ / (√v̂ + ε)`).
fn adam_direction(m: &Matrix, v: &Matrix, t: u64, cfg: &AdamConfig) -> Result<Matrix> {
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let eps = cfg.eps;
    match cfg.eps_placement {
        EpsPlacement::InsideSqrt => m.zip_map(v, "adam_direction", |m, v| (m / c1) / (v / c2 + eps).sqrt()),
        EpsPlacement::OutsideSqrt => {
            m.zip_map(v, "adam_direction", |m, v| (m / c1) / ((v / c2).sqrt() + eps))
        }
    }
}

/// `θ ← θ·(1 − γλ) − γ·α·u`, i.e. `θ − γ(α·u + λθ)` with decoupled weight decay.
fn apply_update(theta: &Matrix, direction: &Matrix, lr: f64, weight_decay: f64, scale: f64) -> Result<Matrix> {
    let next = theta.lin_comb(1.0 - lr * weight_decay, direction, -lr * scale)?;
    next.ensure_finite("non-finite parameter update")?;
    Ok(next)
}

/// Dense Adam with decoupled weight decay.
pub fn dense_adam_step(
    slot: &OptimizerSlot,
    theta: &Matrix,
    g: &Matrix,
    cfg: &AdamConfig,
) -> Result<(Matrix, OptimizerSlot)> {
    let SlotState::DenseAdam { m, v } = &slot.state else {
        return Err(wrong_slot(SlotKind::DenseAdam, slot.kind()));
    };
    check_shapes(theta, g, "dense_adam_step")?;
    let t = slot.step + 1;
    let m = m.lin_comb(cfg.beta1, g, 1.0 - cfg.beta1)?;
    let v = v.lin_comb(cfg.beta2, &hadamard_square(g), 1.0 - cfg.beta2)?;
    let u = adam_direction(&m, &v, t, cfg)?;
    let theta = apply_update(theta, &u, cfg.lr, cfg.weight_decay, 1.0)?;
    Ok((
        theta,
        OptimizerSlot {
            step: t,
            state: SlotState::DenseAdam { m, v },
        },
    ))
}

/// Adam with both moments held as factor pairs.
///
/// Order per step: effective moments from the pre-update factors, factor
/// updates (first moment on `g`, second on `|g|`), bias correction with the
/// incremented counter, then the parameter update scaled by `cfg.scale`.
pub fn lorapre_adam_step(
    slot: &OptimizerSlot,
    theta: &Matrix,
    g: &Matrix,
    cfg: &AdamConfig,
) -> Result<(Matrix, OptimizerSlot)> {
    let SlotState::LowRankAdam { m: m_fac, v: v_fac } = &slot.state else {
        return Err(wrong_slot(SlotKind::LowRankAdam, slot.kind()));
    };
    check_shapes(theta, g, "lorapre_adam_step")?;
    let t = slot.step + 1;
    let m = effective_first_moment(m_fac, g, cfg.beta1)?;
    let v = effective_second_moment(v_fac, g, cfg.beta2)?;
    let m_next = first_moment_update(m_fac, g, cfg.gamma1()?)?;
    let v_next = second_moment_update(v_fac, g, cfg.gamma2()?)?;
    let u = adam_direction(&m, &v, t, cfg)?;
    let theta = apply_update(theta, &u, cfg.lr, cfg.weight_decay, cfg.scale)?;
    Ok((
        theta,
        OptimizerSlot {
            step: t,
            state: SlotState::LowRankAdam {
                m: m_next,
                v: v_next,
            },
        },
    ))
}

/// Dense Muon: `m ← μm + g`, `O = NS(m)`, `θ ← θ − γ(O + λθ)`. No bias correction.
pub fn dense_muon_step(
    slot: &OptimizerSlot,
    theta: &Matrix,
    g: &Matrix,
    cfg: &MuonConfig,
) -> Result<(Matrix, OptimizerSlot)> {
    let SlotState::DenseMuon { m } = &slot.state else {
        return Err(wrong_slot(SlotKind::DenseMuon, slot.kind()));
    };
    check_shapes(theta, g, "dense_muon_step")?;
    let m = m.lin_comb(cfg.momentum, g, 1.0)?;
    let o = newton_schulz(&m, cfg.ns_iterations, cfg.ns_schedule)?;
    let theta = apply_update(theta, &o, cfg.lr, cfg.weight_decay, 1.0)?;
    Ok((
        theta,
        OptimizerSlot {
            step: slot.step + 1,
            state: SlotState::DenseMuon { m },
        },
    ))
}

/// Muon with the momentum held as a factor pair advanced on the shifted objective.
pub fn lorapre_muon_step(
    slot: &OptimizerSlot,
    theta: &Matrix,
    g: &Matrix,
    cfg: &MuonConfig,
) -> Result<(Matrix, OptimizerSlot)> {
    let SlotState::LowRankMuon { m: m_fac } = &slot.state else {
        return Err(wrong_slot(SlotKind::LowRankMuon, slot.kind()));
    };
    check_shapes(theta, g, "lorapre_muon_step")?;
    let m = m_fac.reconstruct().lin_comb(cfg.momentum, g, 1.0)?;
    let m_next = muon_moment_update(m_fac, g, cfg.momentum, cfg.gamma1()?)?;
    let o = newton_schulz(&m, cfg.ns_iterations, cfg.ns_schedule)?;
    let theta = apply_update(theta, &o, cfg.lr, cfg.weight_decay, 1.0)?;
    Ok((
        theta,
        OptimizerSlot {
            step: slot.step + 1,
            state: SlotState::LowRankMuon { m: m_next },
        },
    ))
}
