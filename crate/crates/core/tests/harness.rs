mod common;

use common::*;
use lorapre_core::harness::*;
use lorapre_core::optim::{OptimizerConfig, OptimizerKind};
use lorapre_core::rng::SeededRng;
use lorapre_core::Matrix;

fn lorapre_config(kind: OptimizerKind, rank: usize) -> OptimizerConfig {
    let mut cfg = OptimizerConfig::new(kind);
    cfg.adam.rank = rank;
    cfg.muon.rank = rank;
    cfg
}

#[test]
fn every_problem_passes_self_test() {
    let problems: Vec<Box<dyn Problem>> = vec![
        Box::new(quadratic_problem(6, 5, 100.0, 1).unwrap()),
        Box::new(low_rank_sensing_problem(7, 5, 2, 0.0, 2).unwrap()),
        Box::new(tiny_mlp_problem(5, 4, 3, 12, 3).unwrap()),
    ];
    for p in &problems {
        let worst = gradient_self_test(p.as_ref(), 20, 9).unwrap();
        assert!(worst <= 1e-6, "{}: {worst}", p.name());
    }
}

#[test]
fn quadratic_grads_against_finite_differences() {
    let problem = quadratic_problem(5, 4, 30.0, 4).unwrap();
    let theta = SeededRng::new(5).normal_matrix(5, 4, 2.0);
    let g = &problem.grads(&[theta.clone()]).unwrap()[0];
    let fd = central_diff(&theta, 1e-5, |t| problem.loss(&[t.clone()]).unwrap());
    assert!(rel_err(&fd, g) <= 1e-6);
}

#[test]
fn sensing_first_gradient_has_true_rank() {
    let problem = low_rank_sensing_problem(12, 9, 3, 0.0, 6).unwrap();
    let g = &problem.grads(&problem.initial_params()).unwrap()[0];
    assert_eq!(g, &problem.target().scale(-1.0));
    let s = singular_values(g);
    assert!(s[2] > 0.5, "{s:?}");
    assert!(s[3] <= 1e-12 * s[0], "{s:?}");
}

#[test]
fn single_step_record() {
    let problem = quadratic_problem(4, 4, 10.0, 0).unwrap();
    for kind in [OptimizerKind::Adam, OptimizerKind::LorapreAdam, OptimizerKind::LorapreMuon] {
        let cfg = TrainingConfig {
            steps: 1,
            shadow_oracle: true,
            ..TrainingConfig::new(lorapre_config(kind, 2))
        };
        let run = run_training(&problem, &cfg).unwrap();
        assert_eq!(run.loss.len(), 1);
        assert_eq!(run.grad_norm.len(), 1);
        assert_eq!(run.wall_ms.len(), 1);
        if let Some(sh) = &run.shadow {
            assert_eq!(sh.e_m.len(), 1);
            assert_eq!(sh.delta.len(), 1);
        }
        assert_eq!(run_csv(&run).lines().count(), 2);
    }
}

#[test]
fn runs_are_deterministic() {
    let problem = low_rank_sensing_problem(10, 8, 2, 0.05, 11).unwrap();
    for kind in [
        OptimizerKind::Adam,
        OptimizerKind::Muon,
        OptimizerKind::LorapreAdam,
        OptimizerKind::LorapreMuon,
    ] {
        let cfg = TrainingConfig {
            steps: 60,
            seed: 3,
            shadow_oracle: true,
            ..TrainingConfig::new(lorapre_config(kind, 3))
        };
        let a = run_training(&problem, &cfg).unwrap();
        let b = run_training(&problem, &cfg).unwrap();
        assert_eq!(a, b, "{kind:?}");
        assert_eq!(run_csv(&a), run_csv(&b));
        let c = run_training(&problem, &TrainingConfig { seed: 4, ..cfg }).unwrap();
        if kind.is_low_rank() {
            assert_ne!(a.loss, c.loss, "{kind:?}");
        }
    }
}

#[test]
fn dense_adam_converges_on_quadratic() {
    let problem = quadratic_problem(16, 16, 100.0, 0).unwrap();
    let mut opt = OptimizerConfig::new(OptimizerKind::Adam);
    opt.adam.lr = 0.01;
    let cfg = TrainingConfig {
        steps: 500,
        ..TrainingConfig::new(opt)
    };
    let run = run_training(&problem, &cfg).unwrap();
    assert!(run.final_loss() <= 1e-6 * run.initial_loss, "{} vs {}", run.final_loss(), run.initial_loss);
}

#[test]
fn series_are_finite_and_aligned() {
    let problem = tiny_mlp_problem(8, 6, 3, 30, 2).unwrap();
    let cfg = TrainingConfig {
        steps: 200,
        shadow_oracle: true,
        ..TrainingConfig::new(lorapre_config(OptimizerKind::LorapreAdam, 2))
    };
    let run = run_training(&problem, &cfg).unwrap();
    assert!(run.aborted.is_none());
    assert!(run.final_loss() < run.initial_loss);
    let sh = run.shadow.as_ref().unwrap();
    let second = sh.second.as_ref().unwrap();
    for s in [&run.loss, &run.grad_norm, &sh.e_m, &sh.delta, &sh.capture, &second.e_v, &second.min_effective_v] {
        assert_eq!(s.len(), 200);
        assert!(s.iter().all(|x| x.is_finite()));
    }
    assert!(second.min_effective_v.iter().all(|&v| v >= 0.0));
    // both weight matrices are wide enough for rank 2
    assert_eq!(sh.numel, 8 * 6 + 6 * 3);
}

#[test]
fn recursion_holds_with_measured_residual() {
    let problems: Vec<Box<dyn Problem>> = vec![
        Box::new(low_rank_sensing_problem(16, 12, 2, 0.0, 7).unwrap()),
        Box::new(quadratic_problem(12, 10, 50.0, 1).unwrap()),
        Box::new(tiny_mlp_problem(8, 6, 3, 30, 2).unwrap()),
    ];
    for problem in &problems {
        for kind in [OptimizerKind::LorapreAdam, OptimizerKind::LorapreMuon] {
            let cfg = TrainingConfig {
                steps: 300,
                shadow_oracle: true,
                ..TrainingConfig::new(lorapre_config(kind, 2))
            };
            let run = run_training(problem.as_ref(), &cfg).unwrap();
            let sh = run.shadow.as_ref().unwrap();
            let mut prev = 0.0;
            for (t, (&e, &r)) in sh.e_m.iter().zip(&sh.residual).enumerate() {
                assert!(e <= sh.decay * prev + r + 1e-9, "{} {kind:?} step {}", problem.name(), t + 1);
                prev = e;
            }
        }
    }
}

#[test]
fn captured_gradients_after_burn_in() {
    // Muon keeps θ, and so g, inside the target's row and column spaces.
    let problem = low_rank_sensing_problem(16, 12, 2, 0.0, 7).unwrap();
    for rank in [2, 4] {
        let mut opt = lorapre_config(OptimizerKind::LorapreMuon, rank);
        opt.muon.lr = 1e-5;
        let cfg = TrainingConfig {
            shadow_oracle: true,
            ..TrainingConfig::new(opt)
        };
        let run = run_training(&problem, &cfg).unwrap();
        let sh = run.shadow.as_ref().unwrap();
        for t in 300..run.steps() {
            let g = sh.grad_fro[t];
            assert!(sh.capture[t] <= 1e-4 * g, "r={rank} step {}: {}", t + 1, sh.capture[t] / g);
            // the sum P_B g + g P_A counts a captured g twice
            assert!((sh.delta[t] - g).abs() <= 1e-3 * g);
        }
    }
}

#[test]
fn noise_is_seeded_per_step() {
    let problem = low_rank_sensing_problem(6, 5, 2, 0.1, 8).unwrap();
    let params = problem.initial_params();
    let a = step_grads(&problem, &params, 3).unwrap();
    assert_eq!(a, step_grads(&problem, &params, 3).unwrap());
    assert_ne!(a, step_grads(&problem, &params, 4).unwrap());
    let clean = low_rank_sensing_problem(6, 5, 2, 0.0, 8).unwrap();
    assert_eq!(step_grads(&clean, &params, 3).unwrap(), clean.grads(&params).unwrap());
}

#[test]
fn warmup_cosine_schedule_runs() {
    let problem = quadratic_problem(6, 6, 10.0, 2).unwrap();
    let mut opt = OptimizerConfig::new(OptimizerKind::Adam);
    opt.adam.lr = 0.05;
    let schedule = LrSchedule::WarmupCosine {
        warmup_steps: 10,
        min_ratio: 0.1,
    };
    let cfg = TrainingConfig {
        steps: 100,
        schedule,
        ..TrainingConfig::new(opt)
    };
    let run = run_training(&problem, &cfg).unwrap();
    assert!(run.final_loss() < run.initial_loss);
    assert_eq!(schedule.multiplier(5, 100), 0.5);
    assert!((schedule.multiplier(100, 100) - 0.1).abs() < 1e-15);
}

#[test]
fn csv_layout_and_round_trip() {
    let problem = low_rank_sensing_problem(8, 6, 2, 0.0, 1).unwrap();
    let cfg = TrainingConfig {
        steps: 10,
        shadow_oracle: true,
        ..TrainingConfig::new(lorapre_config(OptimizerKind::LorapreAdam, 2))
    };
    let run = run_training(&problem, &cfg).unwrap();
    let csv = run_csv(&run);
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(RUN_CSV_HEADER));
    let sh = run.shadow.as_ref().unwrap();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[0], (i + 1).to_string());
        assert_eq!(cells[1].parse::<f64>().unwrap().to_bits(), run.loss[i].to_bits());
        assert_eq!(cells[3].parse::<f64>().unwrap().to_bits(), sh.e_m[i].to_bits());
        assert_eq!(cells[5].parse::<f64>().unwrap().to_bits(), sh.delta[i].to_bits());
    }
    let dense = run_training(&problem, &TrainingConfig::new(OptimizerConfig::new(OptimizerKind::Adam))).unwrap();
    let row = run_csv(&dense).lines().nth(1).unwrap().to_string();
    assert_eq!(row.split(',').filter(|c| c.is_empty()).count(), 3);
}

#[test]
fn mlp_zero_weights_loss() {
    let problem = tiny_mlp_problem(4, 5, 3, 9, 0).unwrap();
    let zeros = vec![Matrix::zeros(4, 5), Matrix::zeros(5, 3)];
    assert!((problem.loss(&zeros).unwrap() - 3f64.ln()).abs() < 1e-12);
}
