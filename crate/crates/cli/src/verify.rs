//! Release-gate invariant checks built on the core crate alone.

use lorapre_core::diagnostics::{
    c_q, compute_bounds, delta_res, e_bound, memory_report, moment_error_report, popoviciu_check,
};
use lorapre_core::harness::{low_rank_sensing_problem, run_csv, run_training, RunRecord, TrainingConfig};
use lorapre_core::linalg::{
    damped_left_pinv, damped_right_pinv, hadamard_square, newton_schulz5, spectral_norm, svd_small,
};
use lorapre_core::optim::{
    dense_adam_step, lorapre_adam_step, param_routing, AdamConfig, Optimizer, OptimizerConfig, OptimizerKind,
    OptimizerSlot, ParamSpec,
};
use lorapre_core::regressor::{
    coupling_from_beta, first_moment_update, init_low_rank, muon_moment_update, newton_directions, quadratic_interaction,
    second_moment_update, shifted_grads, shifted_loss, subspace_projection, LowRankMoment, MomentOrder,
};
use lorapre_core::rng::SeededRng;
use lorapre_core::{Matrix, Result};

use crate::Failure;

type Check = Result<std::result::Result<String, String>>;

fn judge(ok: bool, detail: String) -> Check {
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).map(|d| d.frobenius_norm()).unwrap_or(f64::INFINITY);
    diff / b.frobenius_norm().max(1e-300)
}

fn random_state(rng: &mut SeededRng, p: usize, q: usize, r: usize, damping: f64) -> Result<LowRankMoment> {
    LowRankMoment::from_factors(rng.normal_matrix(p, r, 1.0), rng.normal_matrix(r, q, 1.0), damping)
}

fn random_shape(rng: &mut SeededRng) -> (usize, usize, usize) {
    let p = 2 + rng.below(7);
    let q = 2 + rng.below(5);
    (p, q, 1 + rng.below(p.min(q).min(3)))
}

fn central_diff(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let mut up = x.clone();
        up.set(i, j, x.get(i, j) + h);
        let mut down = x.clone();
        down.set(i, j, x.get(i, j) - h);
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// `U·diag(s)·Vᵀ` with singular values spread over `[scale, cond·scale]`.
fn conditioned(rng: &mut SeededRng, p: usize, q: usize, cond: f64, scale: f64) -> Result<Matrix> {
    let basis = svd_small(&rng.normal_matrix(p, q, 1.0))?;
    let k = p.min(q);
    let s: Vec<f64> = (0..k)
        .map(|i| scale * if k == 1 { 1.0 } else { 1.0 + (cond - 1.0) * i as f64 / (k - 1) as f64 })
        .collect();
    Ok(Matrix::from_fn(p, q, |i, j| {
        (0..k).map(|l| basis.u.get(i, l) * s[l] * basis.v.get(j, l)).sum()
    }))
}

struct Suite {
    corrupt: bool,
}

impl Suite {
    fn gamma(&self, beta: f64, order: MomentOrder) -> Result<f64> {
        let g = coupling_from_beta(beta, order)?.gamma;
        Ok(if self.corrupt { g * 1.01 } else { g })
    }

    fn decay(&self, variant: &str) -> Check {
        let mut rng = SeededRng::new(1);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let (p, q, r) = random_shape(&mut rng);
            let s = random_state(&mut rng, p, q, r, 1e-8)?;
            let old = s.reconstruct();
            let zero = Matrix::zeros(p, q);
            let beta = rng.uniform_range(0.0, 0.999);
            let err = match variant {
                "first" => {
                    let m = first_moment_update(&s, &zero, self.gamma(beta, MomentOrder::First)?)?;
                    rel_err(&m.reconstruct(), &old.scale(beta))
                }
                "second" => {
                    let h = second_moment_update(&s, &zero, self.gamma(beta, MomentOrder::Second)?)?.reconstruct();
                    rel_err(&hadamard_square(&h), &hadamard_square(&old).scale(beta))
                }
                _ => {
                    let m = muon_moment_update(&s, &zero, beta, self.gamma(beta, MomentOrder::First)?)?;
                    rel_err(&m.reconstruct(), &old.scale(beta))
                }
            };
            worst = worst.max(err);
        }
        judge(worst <= 1e-12, format!("50 states, max rel err {worst:.2e}"))
    }
}

fn fd_check(mu_range: bool) -> Check {
    let mut rng = SeededRng::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (p, q, r) = random_shape(&mut rng);
        let s = random_state(&mut rng, p, q, r, 1e-8)?;
        let g = rng.normal_matrix(p, q, 1.0);
        let mu = if mu_range { rng.uniform_range(0.0, 0.95) } else { 0.0 };
        let (gb, ga) = shifted_grads(&s, &g, mu)?;
        let fb = central_diff(s.b(), 1e-6, |b| {
            LowRankMoment::from_factors(b.clone(), s.a().clone(), s.damping())
                .and_then(|x| shifted_loss(&x, &g, mu))
                .unwrap_or(f64::NAN)
        });
        let fa = central_diff(s.a(), 1e-6, |a| {
            LowRankMoment::from_factors(s.b().clone(), a.clone(), s.damping())
                .and_then(|x| shifted_loss(&x, &g, mu))
                .unwrap_or(f64::NAN)
        });
        worst = worst.max(rel_err(&gb, &fb)).max(rel_err(&ga, &fa));
    }
    judge(worst <= 1e-6, format!("20 instances, max rel err {worst:.2e}"))
}

/// Hessian blocks applied in matrix form: `d_B·(AAᵀ+λI) = ∇_B + λB`, `(BᵀB+λI)·d_A = ∇_A + λA`.
fn newton_check() -> Check {
    let mut rng = SeededRng::new(3);
    let lambda = 1e-12;
    let mut worst: f64 = 0.0;
    for i in 0..40 {
        let (p, q, r) = random_shape(&mut rng);
        let s = random_state(&mut rng, p, q, r, lambda)?;
        let g = rng.normal_matrix(p, q, 1.0);
        let mu = if i % 2 == 0 { 0.0 } else { rng.uniform_range(0.0, 0.95) };
        let (db, da) = newton_directions(&s, &g, mu)?;
        let (gb, ga) = shifted_grads(&s, &g, mu)?;
        let aat = s.a().matmul_t(s.a())?.add(&Matrix::identity(r).scale(lambda))?;
        let btb = s.b().t_matmul(s.b())?.add(&Matrix::identity(r).scale(lambda))?;
        let hb = db.matmul(&aat)?;
        let ha = btb.matmul(&da)?;
        worst = worst
            .max(rel_err(&hb, &gb.lin_comb(1.0, s.b(), lambda)?))
            .max(rel_err(&ha, &ga.lin_comb(1.0, s.a(), lambda)?));
    }
    judge(worst <= 1e-8, format!("40 instances (plain and shifted), max rel err {worst:.2e}"))
}

fn expansion_check() -> Check {
    let mut rng = SeededRng::new(4);
    let lambda = 1e-6;
    let (mut worst, mut q_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let (p, q, r) = random_shape(&mut rng);
        let s = random_state(&mut rng, p, q, r, lambda)?;
        let g = rng.normal_matrix(p, q, 1.0);
        let gamma = rng.uniform_range(0.01, 1.0);
        let next = first_moment_update(&s, &g, gamma)?.reconstruct();
        let qm = quadratic_interaction(&s, &g)?;
        let want = s
            .reconstruct()
            .lin_comb((1.0 - gamma).powi(2), &subspace_projection(&s, &g)?, gamma * (1.0 - gamma))?
            .lin_comb(1.0, &qm, gamma * gamma)?;
        worst = worst.max(rel_err(&next, &want));
        q_worst = q_worst.max(qm.frobenius_norm() / c_q(g.frobenius_norm(), lambda));
    }
    judge(worst <= 1e-10 && q_worst <= 1.0, format!("50 instances, rel err {worst:.2e}, max ‖Q‖/C_Q {q_worst:.2e}"))
}

fn ns_contract() -> Check {
    let mut rng = SeededRng::new(5);
    let (mut lo, mut hi): (f64, f64) = (f64::INFINITY, 0.0);
    for _ in 0..100 {
        let (p, q) = (1 + rng.below(16), 1 + rng.below(16));
        let cond = rng.uniform_range(1.0, 10.0);
        let scale = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let out = newton_schulz5(&conditioned(&mut rng, p, q, cond, scale)?, 5)?;
        for s in svd_small(&out)?.singular_values {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    judge(lo >= 0.7 && hi <= 1.3, format!("100 matrices, singular values in [{lo:.4}, {hi:.4}]"))
}

fn ns_zero_transpose() -> Check {
    let mut rng = SeededRng::new(6);
    let zero = newton_schulz5(&Matrix::zeros(5, 3), 5)? == Matrix::zeros(5, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (p, q) = (1 + rng.below(12), 1 + rng.below(12));
        let m = rng.normal_matrix(p, q, 1.0);
        let a = newton_schulz5(&m, 5)?;
        let b = newton_schulz5(&m.transpose(), 5)?.transpose();
        worst = worst.max(a.sub(&b)?.max_abs());
    }
    judge(zero && worst <= 1e-10, format!("NS(0) = 0: {zero}, transpose diff {worst:.1e}"))
}

fn pinv_bound() -> Check {
    let mut rng = SeededRng::new(7);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (p, q, r) = random_shape(&mut rng);
        let lambda = 10f64.powf(rng.uniform_range(-8.0, 0.0));
        let scale = 10f64.powf(rng.uniform_range(-5.0, 1.0));
        let ceiling = 1.0 / (2.0 * lambda.sqrt());
        let a = damped_right_pinv(&rng.normal_matrix(r, q, scale), lambda)?;
        let b = damped_left_pinv(&rng.normal_matrix(p, r, scale), lambda)?;
        worst = worst.max(spectral_norm(&a)? / ceiling).max(spectral_norm(&b)? / ceiling);
    }
    judge(worst <= 1.0 + 1e-9, format!("30 factors, max ‖pinv‖₂·2√λ = {worst:.4}"))
}

fn als_check() -> Check {
    let gamma = coupling_from_beta(0.9, MomentOrder::First)?.gamma;
    let g = SeededRng::new(105).normal_matrix(8, 6, 1.0);
    let floor = svd_small(&g)?.truncation_error(2);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut s = init_low_rank(8, 6, 2, 1e-12, seed)?;
        for _ in 0..2000 {
            s = first_moment_update(&s, &g, gamma)?;
        }
        worst = worst.max((s.reconstruct().sub(&g)?.frobenius_norm() - floor).abs());
    }
    judge(worst <= 1e-3, format!("10 initializations, max |err − Eckart–Young| {worst:.2e}"))
}

fn shadow_run(kind: OptimizerKind) -> Result<RunRecord> {
    let problem = low_rank_sensing_problem(16, 12, 2, 0.0, 7)?;
    let mut opt = OptimizerConfig::new(kind);
    opt.adam.rank = 2;
    opt.muon.rank = 2;
    run_training(
        &problem,
        &TrainingConfig {
            steps: 300,
            shadow_oracle: true,
            ..TrainingConfig::new(opt)
        },
    )
}

fn recursion_check(runs: &[RunRecord]) -> Check {
    let mut parts = vec![];
    let mut ok = true;
    for run in runs {
        let sh = run.shadow.as_ref().expect("shadow runs");
        let b = compute_bounds(run, sh.decay, sh.damping)?;
        ok &= run.aborted.is_none()
            && b.recursion_violations == 0
            && b.ceiling_violations == 0
            && b.e_ss <= b.e_bound;
        parts.push(format!(
            "{}: {} + {} violations, E_ss {:.3e} ≤ E_bound {:.3e}",
            run.config.optimizer.kind.name(),
            b.recursion_violations,
            b.ceiling_violations,
            b.e_ss,
            b.e_bound
        ));
    }
    judge(ok, parts.join("; "))
}

fn moment_identity(runs: &[RunRecord]) -> Check {
    let mut worst: f64 = 0.0;
    let mut dv_violations = 0;
    for run in runs {
        let rep = moment_error_report(run)?;
        worst = worst.max(rep.identity_max_err);
        dv_violations += rep.delta_v_violations_measured;
    }
    judge(
        worst <= 1e-12 && dv_violations == 0,
        format!("Δ_m identity err {worst:.2e}, Δ_v ceiling violations {dv_violations}"),
    )
}

fn variance_check(run: &RunRecord) -> Check {
    let rep = popoviciu_check(run)?;
    judge(
        rep.violations == 0,
        format!("max {:.3e} ≤ (√d/4)G∞² = {:.3e}", rep.max_variance, rep.ceiling),
    )
}

fn positivity(run: &RunRecord) -> Check {
    let second = run.shadow.as_ref().and_then(|s| s.second.as_ref());
    let min = second
        .map(|s| s.min_effective_v.iter().cloned().fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN);
    judge(min >= 0.0 && run.aborted.is_none(), format!("min effective v {min:.3e}"))
}

fn memory_check() -> Check {
    for (d, r) in [(512usize, 128usize), (768, 256), (1024, 256), (2048, 512)] {
        let specs = [ParamSpec::matrix("w", d, d)];
        let low = memory_report(&param_routing(&specs, OptimizerKind::LorapreAdam, r));
        let dense = memory_report(&param_routing(&specs, OptimizerKind::Adam, r));
        let mut cfg = OptimizerConfig::new(OptimizerKind::LorapreAdam);
        cfg.adam.rank = r;
        let live = Optimizer::new(cfg, &specs, 0)?.state_entries();
        if low.total != 2 * (d + d) * r || live != low.total || dense.total != 2 * d * d {
            return judge(false, format!("{d}/{r}: {} vs {}", low.total, dense.total));
        }
    }
    judge(true, "4 shapes exact: 2(p+q)r and 2pq".into())
}

fn first_step() -> Check {
    let mut rng = SeededRng::new(8);
    let cfg = AdamConfig {
        damping: 1e-12,
        scale: 1.0,
        rank: 2,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let (p, q) = (3 + rng.below(10), 3 + rng.below(10));
        let theta = rng.normal_matrix(p, q, 1.0);
        let g = rng.normal_matrix(p, q, 1.0);
        let (dense, _) = dense_adam_step(&OptimizerSlot::dense_adam(p, q), &theta, &g, &cfg)?;
        let slot = OptimizerSlot::low_rank_adam(p, q, 2, 1e-12, (case, case + 1000))?;
        let (low, _) = lorapre_adam_step(&slot, &theta, &g, &cfg)?;
        worst = worst.max(dense.sub(&low)?.max_abs());
    }
    judge(worst <= 1e-8, format!("20 cases, max |diff| {worst:.2e}"))
}

fn e_bound_identity() -> Check {
    let mut rng = SeededRng::new(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let beta = rng.uniform_range(0.0, 0.999);
        let (g, delta, cq) = (rng.uniform_range(0.0, 100.0), rng.uniform_range(0.0, 100.0), rng.uniform_range(0.0, 1e4));
        let lhs = e_bound(beta, g, delta, cq);
        worst = worst.max((lhs - delta_res(beta, g, delta, cq) / (1.0 - beta)).abs() / lhs.max(1.0));
    }
    judge(worst <= 1e-12, format!("100 cases, max rel err {worst:.2e}"))
}

fn determinism(run: &RunRecord) -> Check {
    let again = shadow_run(run.config.optimizer.kind)?;
    let same = run_csv(run) == run_csv(&again);
    judge(same, format!("rerun CSV identical: {same}"))
}

pub fn run(corrupt_coupling: bool) -> std::result::Result<(), Failure> {
    let suite = Suite { corrupt: corrupt_coupling };
    let runs = [shadow_run(OptimizerKind::LorapreAdam), shadow_run(OptimizerKind::LorapreMuon)];
    let runs: Vec<RunRecord> = match runs.into_iter().collect::<Result<Vec<_>>>() {
        Ok(r) => r,
        Err(e) => return Err(Failure::Other(format!("reference runs failed: {e}"))),
    };

    let checks: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("decay_first_moment", Box::new(|| suite.decay("first"))),
        ("decay_second_moment", Box::new(|| suite.decay("second"))),
        ("decay_muon_moment", Box::new(|| suite.decay("muon"))),
        ("regression_grads_fd", Box::new(|| fd_check(false))),
        ("shifted_grads_fd", Box::new(|| fd_check(true))),
        ("newton_directions_hessian", Box::new(newton_check)),
        ("expansion_identity_and_q_bound", Box::new(expansion_check)),
        ("newton_schulz_contract", Box::new(ns_contract)),
        ("newton_schulz_zero_transpose", Box::new(ns_zero_transpose)),
        ("damped_pinv_spectral_bound", Box::new(pinv_bound)),
        ("als_eckart_young", Box::new(als_check)),
        ("error_recursion", Box::new(|| recursion_check(&runs))),
        ("first_moment_identity", Box::new(|| moment_identity(&runs))),
        ("variance_ceiling", Box::new(|| variance_check(&runs[0]))),
        ("second_moment_positivity", Box::new(|| positivity(&runs[0]))),
        ("memory_accounting", Box::new(memory_check)),
        ("first_step_equivalence", Box::new(first_step)),
        ("e_bound_identity", Box::new(e_bound_identity)),
        ("determinism", Box::new(|| determinism(&runs[0]))),
    ];

    let mut failed = vec![];
    for (name, check) in &checks {
        let outcome = check().unwrap_or_else(|e| Err(format!("error: {e}")));
        match outcome {
            Ok(detail) => say!("PASS {name}: {detail}"),
            Err(detail) => {
                say!("FAIL {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    say!("{} checks, {} passed, {} failed", checks.len(), checks.len() - failed.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Other(format!("failed checks: {}", failed.join(", "))))
    }
}
