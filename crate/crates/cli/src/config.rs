use std::fmt;
use std::path::{Path, PathBuf};

use lorapre_core::harness::{
    low_rank_sensing_problem, quadratic_problem, tiny_mlp_problem, LrSchedule, Problem, TrainingConfig,
    DEFAULT_STEPS,
};
use lorapre_core::optim::{AdamConfig, MuonConfig, OptimizerConfig, OptimizerKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        p: usize,
        q: usize,
        #[serde(default = "default_condition")]
        condition: f64,
        #[serde(default)]
        seed: u64,
    },
    Sensing {
        p: usize,
        q: usize,
        true_rank: usize,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
    Mlp {
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        n_samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_condition() -> f64 {
    1.0
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub muon: MuonConfig,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shadow_oracle: bool,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Off by default so repeated runs write identical files.
    #[serde(default)]
    pub record_wall_clock: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A config problem with the offending location, if any.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                ConfigError(format!("config: {}", e.inner()))
            } else {
                ConfigError(format!("config field `{path}`: {}", e.inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks on every numeric field; nothing is computed before this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |group: &str, e: lorapre_core::Error| ConfigError(format!("config field `{group}`: {e}"));
        self.adam.validate().map_err(|e| field("adam", e))?;
        if matches!(self.optimizer, OptimizerKind::Muon | OptimizerKind::LorapreMuon) {
            self.muon.validate().map_err(|e| field("muon", e))?;
        }
        if self.steps == 0 {
            return Err(ConfigError("config field `steps`: must be at least 1, got 0".into()));
        }
        if let LrSchedule::WarmupCosine { min_ratio, .. } = self.schedule {
            if !(0.0..=1.0).contains(&min_ratio) {
                return Err(ConfigError(format!(
                    "config field `schedule.min_ratio`: must be in [0, 1], got {min_ratio}"
                )));
            }
        }
        let dims = |name: &str, v: usize| {
            if v == 0 {
                Err(ConfigError(format!("config field `problem.{name}`: must be at least 1, got 0")))
            } else {
                Ok(())
            }
        };
        match &self.problem {
            ProblemConfig::Quadratic { p, q, condition, .. } => {
                dims("p", *p)?;
                dims("q", *q)?;
                if !(*condition >= 1.0) || !condition.is_finite() {
                    return Err(ConfigError(format!(
                        "config field `problem.condition`: must be >= 1, got {condition}"
                    )));
                }
            }
            ProblemConfig::Sensing {
                p,
                q,
                true_rank,
                noise_std,
                ..
            } => {
                dims("p", *p)?;
                dims("q", *q)?;
                if *true_rank == 0 || *true_rank > (*p).min(*q) {
                    return Err(ConfigError(format!(
                        "config field `problem.true_rank`: must lie in 1..={}, got {true_rank}",
                        p.min(q)
                    )));
                }
                if !(*noise_std >= 0.0) || !noise_std.is_finite() {
                    return Err(ConfigError(format!(
                        "config field `problem.noise_std`: must be >= 0, got {noise_std}"
                    )));
                }
            }
            ProblemConfig::Mlp {
                input_dim,
                hidden_dim,
                classes,
                n_samples,
                ..
            } => {
                for (name, v) in [("input_dim", input_dim), ("hidden_dim", hidden_dim), ("classes", classes)] {
                    if *v == 0 || *v > 256 {
                        return Err(ConfigError(format!(
                            "config field `problem.{name}`: must lie in 1..=256, got {v}"
                        )));
                    }
                }
                if *classes < 2 {
                    return Err(ConfigError(format!(
                        "config field `problem.classes`: must be at least 2, got {classes}"
                    )));
                }
                dims("n_samples", *n_samples)?;
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Box<dyn Problem>, ConfigError> {
        let problem: lorapre_core::Result<Box<dyn Problem>> = match self.problem {
            ProblemConfig::Quadratic { p, q, condition, seed } => {
                quadratic_problem(p, q, condition, seed).map(|x| Box::new(x) as Box<dyn Problem>)
            }
            ProblemConfig::Sensing {
                p,
                q,
                true_rank,
                noise_std,
                seed,
            } => low_rank_sensing_problem(p, q, true_rank, noise_std, seed).map(|x| Box::new(x) as Box<dyn Problem>),
            ProblemConfig::Mlp {
                input_dim,
                hidden_dim,
                classes,
                n_samples,
                seed,
            } => tiny_mlp_problem(input_dim, hidden_dim, classes, n_samples, seed)
                .map(|x| Box::new(x) as Box<dyn Problem>),
        };
        problem.map_err(|e| ConfigError(format!("config field `problem`: {e}")))
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            optimizer: OptimizerConfig {
                kind: self.optimizer,
                adam: self.adam.clone(),
                muon: self.muon.clone(),
            },
            steps: self.steps,
            seed: self.seed,
            shadow_oracle: self.shadow_oracle,
            schedule: self.schedule,
            record_wall_clock: self.record_wall_clock,
        }
    }

    /// Sets the factor rank for whichever group the optimizer reads.
    pub fn with_rank(&self, rank: usize) -> Self {
        let mut cfg = self.clone();
        cfg.adam.rank = rank;
        cfg.muon.rank = rank;
        cfg
    }
}
