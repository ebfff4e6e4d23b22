use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{memory_report, MemoryReport};
use crate::error::{Error, Result};
use crate::harness::problems::{step_grads, Problem};
use crate::linalg::{abs_elementwise, hadamard_square, Matrix};
use crate::optim::{
    Assignment, Optimizer, OptimizerConfig, OptimizerKind, OptimizerSlot, SlotState,
};
use crate::regressor::{
    capture_residual, effective_first_moment, effective_second_moment, quadratic_interaction, subspace_residual,
    LowRankMoment,
};

pub const DEFAULT_STEPS: usize = 1000;

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warmup to 1, then cosine decay to `min_ratio` at the last step.
    WarmupCosine { warmup_steps: usize, min_ratio: f64 },
}

impl LrSchedule {
    /// Multiplier for 1-based `step` out of `total`.
    pub fn multiplier(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::WarmupCosine {
                warmup_steps,
                min_ratio,
            } => {
                if step <= warmup_steps {
                    return step as f64 / warmup_steps.max(1) as f64;
                }
                let span = total.saturating_sub(warmup_steps).max(1) as f64;
                let progress = ((step - warmup_steps) as f64 / span).min(1.0);
                min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub seed: u64,
    /// Feed a dense EMA twin the same gradients as the low-rank moments.
    pub shadow_oracle: bool,
    pub schedule: LrSchedule,
    /// Record per-step wall-clock time. Off keeps records bit-reproducible.
    pub record_wall_clock: bool,
}

impl TrainingConfig {
    pub fn new(optimizer: OptimizerConfig) -> Self {
        Self {
            optimizer,
            steps: DEFAULT_STEPS,
            seed: 0,
            shadow_oracle: false,
            schedule: LrSchedule::Constant,
            record_wall_clock: false,
        }
    }
}

/// Second-moment diagnostics of the low-rank Adam parameters, stacked over
/// all low-rank parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentSeries {
    pub beta2: f64,
    /// `‖h_t − ĥ_t‖_F`: dense EMA of `|g|` vs the factor reconstruction.
    pub e_v: Vec<f64>,
    /// `‖h_{t−1} − ĥ_{t−1}‖_F`, the history error entering step `t`.
    pub e_h_prev: Vec<f64>,
    /// `‖v_t − ṽ_t‖_F`.
    pub delta_v: Vec<f64>,
    /// `‖v_{t−1} − h_{t−1}∘²‖_F`.
    pub variance_term: Vec<f64>,
    /// Subspace residual of `|g_t|` under the pre-update magnitude factors.
    pub delta_abs: Vec<f64>,
    /// Smallest entry of the effective second moment `ṽ_t`.
    pub min_effective_v: Vec<f64>,
}

/// Dense-twin measurements on the shared gradient stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowSeries {
    /// EMA decay of the first moment (`β₁` for Adam, `μ` for Muon).
    pub decay: f64,
    pub damping: f64,
    /// Parameter count of the low-rank-routed group.
    pub numel: usize,
    /// `E_t = ‖m_t − m̂_t‖_F`.
    pub e_m: Vec<f64>,
    /// `‖R_t‖_F` with `R_t = (m_t − m̂_t) − decay·(m_{t−1} − m̂_{t−1})`.
    pub residual: Vec<f64>,
    /// `‖g_t − (P_B g_t + g_t P_A)‖_F` with pre-update factors.
    pub delta: Vec<f64>,
    /// `‖g_t − P_B g_t P_A‖_F`, zero when both factor spaces contain `g_t`.
    pub capture: Vec<f64>,
    /// `‖g_t A† B† g_t‖_F`.
    pub q_norm: Vec<f64>,
    pub grad_fro: Vec<f64>,
    pub grad_inf: Vec<f64>,
    /// `‖m_t − m̃_t‖_F`.
    pub delta_m: Vec<f64>,
    pub second: Option<SecondMomentSeries>,
    /// `‖θ_t − θ_t^dense‖_F` against a free-running dense optimizer.
    pub divergence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub config: TrainingConfig,
    pub assignments: Vec<Assignment>,
    pub memory: MemoryReport,
    pub initial_loss: f64,
    /// Loss after each step.
    pub loss: Vec<f64>,
    /// Frobenius norm of the full gradient used at each step.
    pub grad_norm: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub shadow: Option<ShadowSeries>,
    /// Set when the run stopped early on a numeric failure.
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn steps(&self) -> usize {
        self.loss.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.loss.last().copied().unwrap_or(self.initial_loss)
    }
}

struct ShadowParam {
    index: usize,
    m: Matrix,
    prev_err: Matrix,
    v: Option<Matrix>,
    h: Option<Matrix>,
}

struct Shadow {
    params: Vec<ShadowParam>,
    series: ShadowSeries,
    twin: Optimizer,
    twin_params: Vec<Matrix>,
}

fn factor_pair(slot: &OptimizerSlot) -> Option<(&LowRankMoment, Option<&LowRankMoment>)> {
    match &slot.state {
        SlotState::LowRankAdam { m, v } => Some((m, Some(v))),
        SlotState::LowRankMuon { m } => Some((m, None)),
        _ => None,
    }
}

impl Shadow {
    fn new(opt: &Optimizer, problem: &dyn Problem, config: &TrainingConfig) -> Result<Option<Self>> {
        let kind = config.optimizer.kind;
        let (decay, damping) = match kind {
            OptimizerKind::LorapreAdam => (config.optimizer.adam.beta1, config.optimizer.adam.damping),
            OptimizerKind::LorapreMuon => (config.optimizer.muon.momentum, config.optimizer.muon.damping),
            _ => return Ok(None),
        };
        let params: Vec<ShadowParam> = opt
            .assignments()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.kind.is_low_rank())
            .map(|(index, a)| {
                let (p, q) = a.shape.dims();
                let adam = kind == OptimizerKind::LorapreAdam;
                ShadowParam {
                    index,
                    m: Matrix::zeros(p, q),
                    prev_err: Matrix::zeros(p, q),
                    v: adam.then(|| Matrix::zeros(p, q)),
                    h: adam.then(|| Matrix::zeros(p, q)),
                }
            })
            .collect();
        if params.is_empty() {
            return Ok(None);
        }
        let numel = params.iter().map(|p| p.m.len()).sum();
        let second = (kind == OptimizerKind::LorapreAdam).then(|| SecondMomentSeries {
            beta2: config.optimizer.adam.beta2,
            e_v: vec![],
            e_h_prev: vec![],
            delta_v: vec![],
            variance_term: vec![],
            delta_abs: vec![],
            min_effective_v: vec![],
        });
        let mut twin_cfg = config.optimizer.clone();
        twin_cfg.kind = match kind {
            OptimizerKind::LorapreMuon => OptimizerKind::Muon,
            _ => OptimizerKind::Adam,
        };
        let twin = Optimizer::new(twin_cfg, &problem.param_specs(), config.seed)?;
        Ok(Some(Self {
            params,
            series: ShadowSeries {
                decay,
                damping,
                numel,
                e_m: vec![],
                residual: vec![],
                delta: vec![],
                capture: vec![],
                q_norm: vec![],
                grad_fro: vec![],
                grad_inf: vec![],
                delta_m: vec![],
                second,
                divergence: vec![],
            },
            twin,
            twin_params: problem.initial_params(),
        }))
    }

    /// Records one step given the slots before and after the optimizer moved.
    fn observe(
        &mut self,
        before: &[OptimizerSlot],
        after: &[OptimizerSlot],
        grads: &[Matrix],
        muon: bool,
    ) -> Result<()> {
        let decay = self.series.decay;
        let mut acc = [0.0f64; 12];
        let mut grad_inf: f64 = 0.0;
        let mut min_v = f64::INFINITY;
        for sp in &mut self.params {
            let g = &grads[sp.index];
            let (m_pre, v_pre) = factor_pair(&before[sp.index]).expect("routed low-rank");
            let (m_post, v_post) = factor_pair(&after[sp.index]).expect("routed low-rank");

            acc[0] += g.dot(g)?;
            grad_inf = grad_inf.max(g.max_abs());
            acc[1] += subspace_residual(m_pre, g)?.powi(2);
            acc[11] += capture_residual(m_pre, g)?.powi(2);
            acc[2] += quadratic_interaction(m_pre, g)?.frobenius_norm().powi(2);

            let (m_eff, m_new) = if muon {
                (
                    m_pre.reconstruct().lin_comb(decay, g, 1.0)?,
                    sp.m.lin_comb(decay, g, 1.0)?,
                )
            } else {
                (
                    effective_first_moment(m_pre, g, decay)?,
                    sp.m.lin_comb(decay, g, 1.0 - decay)?,
                )
            };
            acc[3] += m_new.sub(&m_eff)?.frobenius_norm().powi(2);
            let err = m_new.sub(&m_post.reconstruct())?;
            acc[4] += err.dot(&err)?;
            acc[5] += err.lin_comb(1.0, &sp.prev_err, -decay)?.frobenius_norm().powi(2);
            sp.m = m_new;
            sp.prev_err = err;

            if let (Some(v_pre), Some(v_post), Some(second)) = (v_pre, v_post, &self.series.second) {
                let beta2 = second.beta2;
                let v_old = sp.v.as_ref().expect("adam shadow");
                let h_old = sp.h.as_ref().expect("adam shadow");
                let abs_g = abs_elementwise(g);
                let v_eff = effective_second_moment(v_pre, g, beta2)?;
                let v_new = v_old.lin_comb(beta2, &hadamard_square(g), 1.0 - beta2)?;
                let h_new = h_old.lin_comb(beta2, &abs_g, 1.0 - beta2)?;
                acc[6] += v_new.sub(&v_eff)?.frobenius_norm().powi(2);
                acc[7] += v_old.sub(&hadamard_square(h_old))?.frobenius_norm().powi(2);
                acc[8] += h_old.sub(&v_pre.reconstruct())?.frobenius_norm().powi(2);
                acc[9] += h_new.sub(&v_post.reconstruct())?.frobenius_norm().powi(2);
                acc[10] += subspace_residual(v_pre, &abs_g)?.powi(2);
                min_v = v_eff.as_slice().iter().cloned().fold(min_v, f64::min);
                sp.v = Some(v_new);
                sp.h = Some(h_new);
            }
        }
        let s = &mut self.series;
        s.grad_fro.push(acc[0].sqrt());
        s.grad_inf.push(grad_inf);
        s.delta.push(acc[1].sqrt());
        s.capture.push(acc[11].sqrt());
        s.q_norm.push(acc[2].sqrt());
        s.delta_m.push(acc[3].sqrt());
        s.e_m.push(acc[4].sqrt());
        s.residual.push(acc[5].sqrt());
        if let Some(second) = &mut s.second {
            second.delta_v.push(acc[6].sqrt());
            second.variance_term.push(acc[7].sqrt());
            second.e_h_prev.push(acc[8].sqrt());
            second.e_v.push(acc[9].sqrt());
            second.delta_abs.push(acc[10].sqrt());
            second.min_effective_v.push(min_v);
        }
        Ok(())
    }

    fn advance_twin(&mut self, problem: &dyn Problem, step: u64, multiplier: f64, params: &[Matrix]) -> Result<()> {
        let grads = step_grads(problem, &self.twin_params, step)?;
        self.twin.set_lr_multiplier(multiplier);
        self.twin.step(&mut self.twin_params, &grads)?;
        let sq: f64 = params
            .iter()
            .zip(&self.twin_params)
            .map(|(a, b)| a.sub(b).map(|d| d.dot(&d).unwrap_or(0.0)))
            .sum::<Result<f64>>()?;
        self.series.divergence.push(sq.sqrt());
        Ok(())
    }
}

fn stacked_norm(ms: &[Matrix]) -> f64 {
    ms.iter().map(|m| m.dot(m).unwrap_or(0.0)).sum::<f64>().sqrt()
}

/// Runs `config.steps` optimizer steps on `problem`.
///
/// Invalid configuration is an `Err`; a numeric failure mid-run returns the
/// partial record with `aborted` set.
pub fn run_training(problem: &dyn Problem, config: &TrainingConfig) -> Result<RunRecord> {
    if config.steps == 0 {
        return Err(Error::Argument("steps must be at least 1".into()));
    }
    let specs = problem.param_specs();
    let mut opt = Optimizer::new(config.optimizer.clone(), &specs, config.seed)?;
    let mut params = problem.initial_params();
    let initial_loss = problem.loss(&params)?;
    let mut shadow = if config.shadow_oracle {
        Shadow::new(&opt, problem, config)?
    } else {
        None
    };
    let muon = config.optimizer.kind == OptimizerKind::LorapreMuon;

    let mut record = RunRecord {
        problem: problem.name().to_string(),
        config: config.clone(),
        assignments: opt.assignments().to_vec(),
        memory: memory_report(opt.assignments()),
        initial_loss,
        loss: Vec::with_capacity(config.steps),
        grad_norm: Vec::with_capacity(config.steps),
        wall_ms: Vec::with_capacity(config.steps),
        shadow: None,
        aborted: None,
    };

    for step in 1..=config.steps {
        let started = Instant::now();
        let outcome = (|| -> Result<(f64, f64)> {
            let grads = step_grads(problem, &params, step as u64)?;
            let grad_norm = stacked_norm(&grads);
            let multiplier = config.schedule.multiplier(step, config.steps);
            opt.set_lr_multiplier(multiplier);
            let before = shadow.as_ref().map(|_| opt.slots().to_vec());
            opt.step(&mut params, &grads)?;
            if let (Some(sh), Some(before)) = (shadow.as_mut(), before) {
                sh.observe(&before, opt.slots(), &grads, muon)?;
                sh.advance_twin(problem, step as u64, multiplier, &params)?;
            }
            let loss = problem.loss(&params)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss}")));
            }
            Ok((loss, grad_norm))
        })();
        match outcome {
            Ok((loss, grad_norm)) => {
                record.loss.push(loss);
                record.grad_norm.push(grad_norm);
                record.wall_ms.push(if config.record_wall_clock {
                    started.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                });
            }
            Err(e) => {
                record.aborted = Some(format!("step {step}: {e}"));
                break;
            }
        }
    }
    if let Some(sh) = shadow {
        let mut series = sh.series;
        // keep series aligned with completed steps after an abort
        let n = record.loss.len();
        truncate_series(&mut series, n);
        record.shadow = Some(series);
    }
    Ok(record)
}

fn truncate_series(s: &mut ShadowSeries, n: usize) {
    for v in [
        &mut s.e_m,
        &mut s.residual,
        &mut s.delta,
        &mut s.capture,
        &mut s.q_norm,
        &mut s.grad_fro,
        &mut s.grad_inf,
        &mut s.delta_m,
        &mut s.divergence,
    ] {
        v.truncate(n);
    }
    if let Some(second) = &mut s.second {
        for v in [
            &mut second.e_v,
            &mut second.e_h_prev,
            &mut second.delta_v,
            &mut second.variance_term,
            &mut second.delta_abs,
            &mut second.min_effective_v,
        ] {
            v.truncate(n);
        }
    }
}
