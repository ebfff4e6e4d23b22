use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{NsSchedule, NS_DEFAULT_ITERATIONS};
use crate::regressor::{coupling_from_beta, MomentOrder, DEFAULT_DAMPING};

/// Where `ε` enters the Adam denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsPlacement {
    /// `m̂ / √(v̂ + ε)`
    #[default]
    InsideSqrt,
    /// `m̂ / (√v̂ + ε)`
    OutsideSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Factor rate for the first moment; `None` couples it as `1 − √β₁`.
    pub gamma1: Option<f64>,
    /// Factor rate for the second moment; `None` couples it as `1 − β₂^¼`.
    pub gamma2: Option<f64>,
    pub rank: usize,
    pub damping: f64,
    /// Multiplier on the normalized update of low-rank-routed parameters.
    pub scale: f64,
    pub eps_placement: EpsPlacement,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            gamma1: None,
            gamma2: None,
            rank: 8,
            damping: DEFAULT_DAMPING,
            scale: 0.25,
            eps_placement: EpsPlacement::InsideSqrt,
        }
    }
}

pub(crate) fn field_error(field: &str, requirement: &str, value: impl std::fmt::Display) -> Error {
    Error::Argument(format!("{field} must be {requirement}, got {value}"))
}

fn check_unit_interval(field: &str, x: f64) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(field_error(field, "in [0, 1)", x))
    }
}

fn check_positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(field_error(field, "positive and finite", x))
    }
}

fn check_non_negative(field: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(field_error(field, "non-negative and finite", x))
    }
}

fn check_gamma(field: &str, g: Option<f64>) -> Result<()> {
    match g {
        Some(x) if !(x > 0.0 && x <= 1.0) => Err(field_error(field, "in (0, 1]", x)),
        _ => Ok(()),
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("lr", self.lr)?;
        check_unit_interval("beta1", self.beta1)?;
        check_unit_interval("beta2", self.beta2)?;
        check_positive("eps", self.eps)?;
        check_non_negative("weight_decay", self.weight_decay)?;
        check_gamma("gamma1", self.gamma1)?;
        check_gamma("gamma2", self.gamma2)?;
        if self.rank == 0 {
            return Err(field_error("rank", "at least 1", self.rank));
        }
        check_positive("damping", self.damping)?;
        check_positive("scale", self.scale)
    }

    pub fn gamma1(&self) -> Result<f64> {
        match self.gamma1 {
            Some(g) => Ok(g),
            None => Ok(coupling_from_beta(self.beta1, MomentOrder::First)?.gamma),
        }
    }

    pub fn gamma2(&self) -> Result<f64> {
        match self.gamma2 {
            Some(g) => Ok(g),
            None => Ok(coupling_from_beta(self.beta2, MomentOrder::Second)?.gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuonConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `None` couples the factor rate as `1 − √μ`.
    pub gamma1: Option<f64>,
    pub rank: usize,
    pub damping: f64,
    pub ns_iterations: usize,
    pub ns_schedule: NsSchedule,
}

impl Default for MuonConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            momentum: 0.95,
            weight_decay: 0.0,
            gamma1: None,
            rank: 8,
            damping: DEFAULT_DAMPING,
            ns_iterations: NS_DEFAULT_ITERATIONS,
            ns_schedule: NsSchedule::default(),
        }
    }
}

impl MuonConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("lr", self.lr)?;
        check_unit_interval("momentum", self.momentum)?;
        check_non_negative("weight_decay", self.weight_decay)?;
        check_gamma("gamma1", self.gamma1)?;
        if self.rank == 0 {
            return Err(field_error("rank", "at least 1", self.rank));
        }
        check_positive("damping", self.damping)?;
        if self.ns_iterations == 0 {
            return Err(field_error("ns_iterations", "at least 1", self.ns_iterations));
        }
        Ok(())
    }

    pub fn gamma1(&self) -> Result<f64> {
        match self.gamma1 {
            Some(g) => Ok(g),
            None => Ok(coupling_from_beta(self.momentum, MomentOrder::First)?.gamma),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupled_defaults() {
        let cfg = AdamConfig::default();
        let g1 = cfg.gamma1().unwrap();
        let g2 = cfg.gamma2().unwrap();
        assert!(((1.0 - g1).powi(2) - cfg.beta1).abs() < 1e-15);
        assert!(((1.0 - g2).powi(4) - cfg.beta2).abs() < 1e-15);
        let muon = MuonConfig::default();
        assert!(((1.0 - muon.gamma1().unwrap()).powi(2) - muon.momentum).abs() < 1e-15);
    }

    #[test]
    fn overrides_win() {
        let cfg = AdamConfig {
            gamma1: Some(0.3),
            gamma2: Some(0.2),
            ..Default::default()
        };
        assert_eq!(cfg.gamma1().unwrap(), 0.3);
        assert_eq!(cfg.gamma2().unwrap(), 0.2);
    }

    #[test]
    fn validation_names_field() {
        let cfg = AdamConfig {
            beta1: 1.2,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("beta1"), "{msg}");
        let cfg = MuonConfig {
            ns_iterations: 0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("ns_iterations"));
        assert!(AdamConfig::default().validate().is_ok());
        assert!(MuonConfig::default().validate().is_ok());
    }
}
