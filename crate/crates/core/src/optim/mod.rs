//! Dense and low-rank Adam/Muon optimizers, parameter routing and the
//! multi-parameter [`Optimizer`] driver.

mod config;
mod steps;

use serde::{Deserialize, Serialize};

pub use config::{AdamConfig, EpsPlacement, MuonConfig};
pub use steps::{
    dense_adam_step, dense_muon_step, lorapre_adam_step, lorapre_muon_step, OptimizerSlot, SlotKind,
    SlotState,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Muon,
    LorapreAdam,
    LorapreMuon,
}

impl OptimizerKind {
    pub fn is_low_rank(self) -> bool {
        matches!(self, OptimizerKind::LorapreAdam | OptimizerKind::LorapreMuon)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Muon => "muon",
            OptimizerKind::LorapreAdam => "lorapre_adam",
            OptimizerKind::LorapreMuon => "lorapre_muon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamShape {
    Vector(usize),
    Matrix(usize, usize),
}

impl ParamShape {
    /// Storage shape; vectors are held as `n x 1` matrices.
    pub fn dims(self) -> (usize, usize) {
        match self {
            ParamShape::Vector(n) => (n, 1),
            ParamShape::Matrix(p, q) => (p, q),
        }
    }

    pub fn numel(self) -> usize {
        let (p, q) = self.dims();
        p * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: ParamShape,
}

impl ParamSpec {
    pub fn matrix(name: impl Into<String>, p: usize, q: usize) -> Self {
        Self {
            name: name.into(),
            shape: ParamShape::Matrix(p, q),
        }
    }

    pub fn vector(name: impl Into<String>, n: usize) -> Self {
        Self {
            name: name.into(),
            shape: ParamShape::Vector(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    LowRank,
    Dense,
}

/// Routing decision for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub name: String,
    pub shape: ParamShape,
    pub route: Route,
    pub kind: SlotKind,
    /// Factor rank when `route` is low-rank.
    pub rank: Option<usize>,
}

/// Matrices whose smaller side exceeds `rank` get low-rank momentum under the
/// low-rank optimizers; vectors and small matrices stay dense. Under Muon
/// variants vectors fall back to dense Adam.
pub fn param_routing(specs: &[ParamSpec], kind: OptimizerKind, rank: usize) -> Vec<Assignment> {
    specs
        .iter()
        .map(|spec| {
            let low_rank = match spec.shape {
                ParamShape::Vector(_) => false,
                ParamShape::Matrix(p, q) => kind.is_low_rank() && p.min(q) > rank,
            };
            let is_matrix = matches!(spec.shape, ParamShape::Matrix(..));
            let slot = match (kind, low_rank, is_matrix) {
                (OptimizerKind::LorapreAdam, true, _) => SlotKind::LowRankAdam,
                (OptimizerKind::LorapreMuon, true, _) => SlotKind::LowRankMuon,
                (OptimizerKind::Muon | OptimizerKind::LorapreMuon, false, true) => SlotKind::DenseMuon,
                _ => SlotKind::DenseAdam,
            };
            Assignment {
                name: spec.name.clone(),
                shape: spec.shape,
                route: if low_rank { Route::LowRank } else { Route::Dense },
                kind: slot,
                rank: low_rank.then_some(rank),
            }
        })
        .collect()
}

/// Optimizer kind plus both hyper-parameter groups. Muon variants use `adam`
/// for parameters routed to dense Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub adam: AdamConfig,
    pub muon: MuonConfig,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            adam: AdamConfig::default(),
            muon: MuonConfig::default(),
        }
    }

    pub fn rank(&self) -> usize {
        match self.kind {
            OptimizerKind::Muon | OptimizerKind::LorapreMuon => self.muon.rank,
            _ => self.adam.rank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if matches!(self.kind, OptimizerKind::Muon | OptimizerKind::LorapreMuon) {
            self.muon.validate()?;
        }
        Ok(())
    }
}

/// Owns one slot per parameter and dispatches each step by slot kind.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    assignments: Vec<Assignment>,
    slots: Vec<OptimizerSlot>,
    lr_multiplier: f64,
}

impl Optimizer {
    /// Routes `specs` and initializes slots; low-rank factors draw from
    /// sub-seeds of `seed`.
    pub fn new(config: OptimizerConfig, specs: &[ParamSpec], seed: u64) -> Result<Self> {
        config.validate()?;
        let assignments = param_routing(specs, config.kind, config.rank());
        let slots = assignments
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (p, q) = a.shape.dims();
                let i = i as u64;
                match a.kind {
                    SlotKind::DenseAdam => Ok(OptimizerSlot::dense_adam(p, q)),
                    SlotKind::DenseMuon => Ok(OptimizerSlot::dense_muon(p, q)),
                    SlotKind::LowRankAdam => OptimizerSlot::low_rank_adam(
                        p,
                        q,
                        config.adam.rank,
                        config.adam.damping,
                        (derive_seed(seed, 2 * i), derive_seed(seed, 2 * i + 1)),
                    ),
                    SlotKind::LowRankMuon => OptimizerSlot::low_rank_muon(
                        p,
                        q,
                        config.muon.rank,
                        config.muon.damping,
                        derive_seed(seed, 2 * i),
                    ),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            assignments,
            slots,
            lr_multiplier: 1.0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn slots(&self) -> &[OptimizerSlot] {
        &self.slots
    }

    /// Scales every learning rate for subsequent steps (used by schedules).
    pub fn set_lr_multiplier(&mut self, multiplier: f64) {
        self.lr_multiplier = multiplier;
    }

    pub fn state_entries(&self) -> usize {
        self.slots.iter().map(OptimizerSlot::state_entries).sum()
    }

    /// Advances every parameter in place. On error no parameter or slot is modified.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::Argument(format!(
                "expected {} parameters and gradients, got {} and {}",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        let mut adam = self.config.adam.clone();
        adam.lr *= self.lr_multiplier;
        let mut muon = self.config.muon.clone();
        muon.lr *= self.lr_multiplier;

        let mut updates = Vec::with_capacity(self.slots.len());
        for (i, slot) in self.slots.iter().enumerate() {
            let (theta, g) = (&params[i], &grads[i]);
            let out = match slot.kind() {
                SlotKind::DenseAdam => dense_adam_step(slot, theta, g, &adam),
                SlotKind::LowRankAdam => lorapre_adam_step(slot, theta, g, &adam),
                SlotKind::DenseMuon => dense_muon_step(slot, theta, g, &muon),
                SlotKind::LowRankMuon => lorapre_muon_step(slot, theta, g, &muon),
            };
            let name = &self.assignments[i].name;
            updates.push(out.map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("parameter {name}: {msg}")),
                other => other,
            })?);
        }
        for (i, (theta, slot)) in updates.into_iter().enumerate() {
            params[i] = theta;
            self.slots[i] = slot;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_rules() {
        let specs = vec![
            ParamSpec::matrix("big", 512, 512),
            ParamSpec::vector("bias", 64),
            ParamSpec::matrix("small", 4, 4),
        ];
        let a = param_routing(&specs, OptimizerKind::LorapreAdam, 128);
        assert_eq!(a[0].route, Route::LowRank);
        assert_eq!(a[0].kind, SlotKind::LowRankAdam);
        assert_eq!(a[1].route, Route::Dense);
        assert_eq!(a[1].kind, SlotKind::DenseAdam);
        let a = param_routing(&specs, OptimizerKind::LorapreAdam, 8);
        assert_eq!(a[2].route, Route::Dense);

        let a = param_routing(&specs, OptimizerKind::LorapreMuon, 128);
        assert_eq!(a[0].kind, SlotKind::LowRankMuon);
        assert_eq!(a[1].kind, SlotKind::DenseAdam);
        assert_eq!(a[2].kind, SlotKind::DenseMuon);

        let a = param_routing(&specs, OptimizerKind::Adam, 1);
        assert!(a.iter().all(|x| x.kind == SlotKind::DenseAdam));
        let a = param_routing(&specs, OptimizerKind::Muon, 1);
        assert_eq!(a[0].kind, SlotKind::DenseMuon);
        assert_eq!(a[1].kind, SlotKind::DenseAdam);
    }

    #[test]
    fn rank_equal_to_min_dim_is_dense() {
        let a = param_routing(&[ParamSpec::matrix("w", 8, 6)], OptimizerKind::LorapreAdam, 6);
        assert_eq!(a[0].route, Route::Dense);
    }

    #[test]
    fn optimizer_rejects_mismatched_inputs() {
        let mut opt = Optimizer::new(
            OptimizerConfig::new(OptimizerKind::Adam),
            &[ParamSpec::matrix("w", 2, 2)],
            0,
        )
        .unwrap();
        let mut params = vec![];
        assert!(opt.step(&mut params, &[]).is_err());
    }
}
