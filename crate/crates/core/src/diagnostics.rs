//! Post-processing of run records: state-memory accounting and the empirical
//! error-bound checks for low-rank first and second moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{RunRecord, ShadowSeries};
use crate::linalg::Matrix;
use crate::optim::{Assignment, ParamShape, Route, SlotKind};

/// Slack on the measured-residual recursion check, which holds to rounding.
pub const RECURSION_TOL: f64 = 1e-9;
/// Fraction of trailing steps treated as steady state.
pub const STEADY_STATE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub name: String,
    pub kind: SlotKind,
    pub route: Route,
    pub rank: Option<usize>,
    pub entries: usize,
    /// What the same parameter would cost with a dense state of the same optimizer family.
    pub dense_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub params: Vec<MemoryEntry>,
    pub total: usize,
    pub dense_total: usize,
}

impl MemoryReport {
    /// `total / dense_total`.
    pub fn ratio(&self) -> f64 {
        if self.dense_total == 0 {
            return 1.0;
        }
        self.total as f64 / self.dense_total as f64
    }
}

fn slot_entries(kind: SlotKind, shape: ParamShape, rank: Option<usize>) -> (usize, usize) {
    let (p, q) = shape.dims();
    let r = rank.unwrap_or(0);
    match kind {
        SlotKind::DenseAdam => (2 * p * q, 2 * p * q),
        SlotKind::DenseMuon => (p * q, p * q),
        SlotKind::LowRankAdam => (2 * (p + q) * r, 2 * p * q),
        SlotKind::LowRankMuon => ((p + q) * r, p * q),
    }
}

pub fn memory_report(assignments: &[Assignment]) -> MemoryReport {
    let params: Vec<MemoryEntry> = assignments
        .iter()
        .map(|a| {
            let (entries, dense_entries) = slot_entries(a.kind, a.shape, a.rank);
            MemoryEntry {
                name: a.name.clone(),
                kind: a.kind,
                route: a.route,
                rank: a.rank,
                entries,
                dense_entries,
            }
        })
        .collect();
    MemoryReport {
        total: params.iter().map(|e| e.entries).sum(),
        dense_total: params.iter().map(|e| e.dense_entries).sum(),
        params,
    }
}

/// `G² / (4λ)`, the ceiling on `‖g A† B† g‖_F` when `‖g‖_F ≤ G`.
pub fn c_q(g: f64, lambda: f64) -> f64 {
    g * g / (4.0 * lambda)
}

/// `(1−√β)G + √β(1−√β)δ + (1−√β)²C_Q`.
pub fn delta_res(beta1: f64, g: f64, delta: f64, c_q: f64) -> f64 {
    let s = beta1.sqrt();
    (1.0 - s) * g + s * (1.0 - s) * delta + (1.0 - s).powi(2) * c_q
}

/// `(G + √β·δ + (1−√β)C_Q) / (1 + √β)`.
pub fn e_bound(beta1: f64, g: f64, delta: f64, c_q: f64) -> f64 {
    let s = beta1.sqrt();
    (g + s * delta + (1.0 - s) * c_q) / (1.0 + s)
}

/// `(√d / 4)·G∞²`.
pub fn sigma_total_sq(d: usize, g_inf: f64) -> f64 {
    (d as f64).sqrt() / 4.0 * g_inf * g_inf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub beta1: f64,
    pub lambda: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "G_inf")]
    pub g_inf: f64,
    pub delta: f64,
    #[serde(rename = "C_Q")]
    pub c_q: f64,
    #[serde(rename = "Delta_res")]
    pub delta_res: f64,
    #[serde(rename = "E_bound")]
    pub e_bound: f64,
    #[serde(rename = "E_ss")]
    pub e_ss: f64,
    /// Steps with `E_t > β·E_{t−1} + ‖R_t‖_F + tol`.
    pub recursion_violations: usize,
    /// Steps with `E_t > β·E_{t−1} + Δ_res`.
    pub ceiling_violations: usize,
    pub sigma_total_sq: f64,
    /// `(E_bound + σ²_total)²`, the noise floor up to unknown constants. Informational.
    pub convergence_floor: f64,
}

fn shadow_of(run: &RunRecord) -> Result<&ShadowSeries> {
    run.shadow
        .as_ref()
        .ok_or_else(|| Error::Argument("run has no shadow-oracle series".into()))
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(0.0, f64::max)
}

/// Max of the trailing [`STEADY_STATE_FRACTION`] of `series` (at least one entry).
pub fn steady_state(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let tail = ((series.len() as f64 * STEADY_STATE_FRACTION).ceil() as usize).max(1);
    max_of(&series[series.len() - tail..])
}

fn validate_beta_lambda(beta1: f64, lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta1) {
        return Err(Error::Argument(format!("beta1 must lie in [0, 1), got {beta1}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Evaluates the closed-form constants from the run's measured `G`, `G∞`, `δ`
/// and counts recursion violations.
pub fn compute_bounds(run: &RunRecord, beta1: f64, lambda: f64) -> Result<BoundReport> {
    validate_beta_lambda(beta1, lambda)?;
    let sh = shadow_of(run)?;
    let g = max_of(&sh.grad_fro);
    let g_inf = max_of(&sh.grad_inf);
    let delta = max_of(&sh.delta);
    let cq = c_q(g, lambda);
    let dres = delta_res(beta1, g, delta, cq);
    let eb = e_bound(beta1, g, delta, cq);

    let mut recursion_violations = 0;
    let mut ceiling_violations = 0;
    let mut prev = 0.0;
    for (e, r) in sh.e_m.iter().zip(&sh.residual) {
        if *e > beta1 * prev + r + RECURSION_TOL {
            recursion_violations += 1;
        }
        let ceiling = beta1 * prev + dres;
        if *e > ceiling + RECURSION_TOL * ceiling.max(1.0) {
            ceiling_violations += 1;
        }
        prev = *e;
    }
    let sigma = sigma_total_sq(sh.numel, g_inf);
    Ok(BoundReport {
        beta1,
        lambda,
        g,
        g_inf,
        delta,
        c_q: cq,
        delta_res: dres,
        e_bound: eb,
        e_ss: steady_state(&sh.e_m),
        recursion_violations,
        ceiling_violations,
        sigma_total_sq: sigma,
        convergence_floor: (eb + sigma).powi(2),
    })
}

/// Effective-moment errors against the dense twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrorReport {
    /// `‖m_t − m̃_t‖_F`.
    pub delta_m: Vec<f64>,
    /// `β·E_{t−1}` with `E_0 = 0`.
    pub delta_m_predicted: Vec<f64>,
    /// Largest `|Δ_m − β·E_{t−1}|` relative to `max(1, β·E_{t−1})`.
    pub identity_max_err: f64,
    /// `β·E_bound`.
    pub delta_m_ceiling: f64,
    /// `‖v_t − ṽ_t‖_F`; empty for Muon runs.
    pub delta_v: Vec<f64>,
    /// `β₂(2G∞·E_meas + σ²_total)` with the measured magnitude-history error.
    pub delta_v_ceiling_measured: Vec<f64>,
    /// `β₂(2G∞·E_bound + σ²_total)`.
    pub delta_v_ceiling_stated: f64,
    pub delta_v_violations_measured: usize,
    pub delta_v_violations_stated: usize,
}

pub fn moment_error_report(run: &RunRecord) -> Result<MomentErrorReport> {
    let sh = shadow_of(run)?;
    let beta = sh.decay;
    let bounds = compute_bounds(run, beta, sh.damping)?;

    let mut predicted = Vec::with_capacity(sh.e_m.len());
    let mut identity_max_err: f64 = 0.0;
    let mut prev = 0.0;
    for (dm, e) in sh.delta_m.iter().zip(&sh.e_m) {
        let p = beta * prev;
        identity_max_err = identity_max_err.max((dm - p).abs() / p.max(1.0));
        predicted.push(p);
        prev = *e;
    }

    let mut report = MomentErrorReport {
        delta_m: sh.delta_m.clone(),
        delta_m_predicted: predicted,
        identity_max_err,
        delta_m_ceiling: beta * bounds.e_bound,
        delta_v: vec![],
        delta_v_ceiling_measured: vec![],
        delta_v_ceiling_stated: 0.0,
        delta_v_violations_measured: 0,
        delta_v_violations_stated: 0,
    };
    if let Some(second) = &sh.second {
        let b2 = second.beta2;
        let sigma = bounds.sigma_total_sq;
        let g_inf = bounds.g_inf;
        report.delta_v_ceiling_stated = b2 * (2.0 * g_inf * bounds.e_bound + sigma);
        for (dv, e) in second.delta_v.iter().zip(&second.e_h_prev) {
            let ceiling = b2 * (2.0 * g_inf * e + sigma);
            if *dv > ceiling * (1.0 + 1e-12) {
                report.delta_v_violations_measured += 1;
            }
            if *dv > report.delta_v_ceiling_stated * (1.0 + 1e-12) {
                report.delta_v_violations_stated += 1;
            }
            report.delta_v_ceiling_measured.push(ceiling);
        }
        report.delta_v = second.delta_v.clone();
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopoviciuReport {
    /// `‖v_{t−1} − h_{t−1}∘²‖_F` per step.
    pub variance_term: Vec<f64>,
    /// `(√d/4)·G∞²`.
    pub ceiling: f64,
    pub max_variance: f64,
    pub violations: usize,
}

fn popoviciu_from(variance_term: Vec<f64>, d: usize, g_inf: f64) -> PopoviciuReport {
    let ceiling = sigma_total_sq(d, g_inf);
    let violations = variance_term
        .iter()
        .filter(|x| **x > ceiling * (1.0 + 1e-12))
        .count();
    PopoviciuReport {
        max_variance: max_of(&variance_term),
        variance_term,
        ceiling,
        violations,
    }
}

/// Variance-term check on a low-rank Adam run with the shadow oracle.
pub fn popoviciu_check(run: &RunRecord) -> Result<PopoviciuReport> {
    let sh = shadow_of(run)?;
    let second = sh
        .second
        .as_ref()
        .ok_or_else(|| Error::Argument("run has no second-moment series".into()))?;
    Ok(popoviciu_from(
        second.variance_term.clone(),
        sh.numel,
        max_of(&sh.grad_inf),
    ))
}

/// The same check on an explicit gradient stream: dense EMAs of `g∘²` and `|g|`
/// from zero, reporting the variance term entering each step.
pub fn popoviciu_stream(stream: &[Matrix], beta2: f64) -> Result<PopoviciuReport> {
    let first = stream
        .first()
        .ok_or_else(|| Error::Argument("empty gradient stream".into()))?;
    let (p, q) = first.shape();
    let mut v = Matrix::zeros(p, q);
    let mut h = Matrix::zeros(p, q);
    let mut terms = Vec::with_capacity(stream.len());
    let mut g_inf: f64 = 0.0;
    for g in stream {
        let h_sq = h.map(|x| x * x);
        terms.push(v.sub(&h_sq)?.frobenius_norm());
        v = v.lin_comb(beta2, &g.map(|x| x * x), 1.0 - beta2)?;
        h = h.lin_comb(beta2, &g.map(f64::abs), 1.0 - beta2)?;
        g_inf = g_inf.max(g.max_abs());
    }
    Ok(popoviciu_from(terms, p * q, g_inf))
}
