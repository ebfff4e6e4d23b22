use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lorapre_core::diagnostics::{compute_bounds, BoundReport};
use lorapre_core::harness::{format_float, run_csv, run_training, RunRecord};
use lorapre_core::optim::Route;

use crate::config::ExperimentConfig;
use crate::output::write_atomic;
use crate::svg::line_chart;
use crate::Failure;

pub const SWEEP_CSV_HEADER: &str = "rank,final_loss,steady_E_ss,state_entries,route";

fn load(path: &Path, seed: Option<u64>, shadow: bool) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.shadow_oracle |= shadow;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn train(cfg: &ExperimentConfig) -> Result<RunRecord, Failure> {
    let problem = cfg.build_problem()?;
    run_training(problem.as_ref(), &cfg.training_config()).map_err(|e| Failure::Config(e.to_string()))
}

fn bounds(run: &RunRecord) -> Option<BoundReport> {
    let sh = run.shadow.as_ref()?;
    compute_bounds(run, sh.decay, sh.damping).ok()
}

fn summary(cfg: &ExperimentConfig, run: &RunRecord, bounds: Option<&BoundReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "problem: {}", run.problem);
    let _ = writeln!(s, "optimizer: {}", cfg.optimizer.name());
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "steps: {} of {}", run.steps(), cfg.steps);
    let _ = writeln!(s, "initial_loss: {}", format_float(run.initial_loss));
    let _ = writeln!(s, "final_loss: {}", format_float(run.final_loss()));
    let _ = writeln!(
        s,
        "state_entries: {} (dense {}, ratio {:.4})",
        run.memory.total,
        run.memory.dense_total,
        run.memory.ratio()
    );
    for a in &run.assignments {
        let rank = a.rank.map(|r| format!(" rank {r}")).unwrap_or_default();
        let _ = writeln!(s, "param {}: {:?} {:?}{rank}", a.name, a.kind, a.route);
    }
    match bounds {
        Some(b) => {
            let _ = writeln!(
                s,
                "E_ss: {} E_bound: {} recursion_violations: {} ceiling_violations: {}",
                format_float(b.e_ss),
                format_float(b.e_bound),
                b.recursion_violations,
                b.ceiling_violations
            );
        }
        None => {
            let _ = writeln!(s, "bounds: not computed (no low-rank parameters under the shadow oracle)");
        }
    }
    let _ = writeln!(s, "status: {}", run.aborted.as_deref().unwrap_or("completed"));
    s
}

/// Writes run.csv, summary.txt and, when shadow series exist, bounds.json.
fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunRecord) -> Result<Option<BoundReport>, Failure> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("run.csv"), &run_csv(run))?;
    let b = bounds(run);
    if let Some(b) = &b {
        let json = serde_json::to_string_pretty(b).map_err(|e| Failure::Other(e.to_string()))?;
        write_atomic(&dir.join("bounds.json"), &(json + "\n"))?;
    }
    write_atomic(&dir.join("summary.txt"), &summary(cfg, run, b.as_ref()))?;
    Ok(b)
}

pub fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, shadow: bool) -> Result<(), Failure> {
    let cfg = load(config, seed, shadow)?;
    let dir = out_dir(&cfg, out);
    let run = train(&cfg)?;
    write_run(&dir, &cfg, &run)?;
    if let Some(reason) = &run.aborted {
        return Err(Failure::Numeric(format!(
            "run aborted at {reason}; partial outputs kept in {}",
            dir.display()
        )));
    }
    say!(
        "{} steps, final loss {}, outputs in {}",
        run.steps(),
        format_float(run.final_loss()),
        dir.display()
    );
    Ok(())
}

fn route_label(run: &RunRecord) -> &'static str {
    let low = run.assignments.iter().filter(|a| a.route == Route::LowRank).count();
    if low == run.assignments.len() {
        "low_rank"
    } else if low == 0 {
        "dense"
    } else {
        "mixed"
    }
}

struct SweepRow {
    rank: usize,
    run: RunRecord,
    e_ss: Option<f64>,
}

pub fn sweep_rank(config: &Path, ranks: &[usize], out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    // E_ss needs the dense twin, so sweeps always carry the shadow oracle.
    let base = load(config, seed, true)?;
    if !base.optimizer.is_low_rank() {
        return Err(Failure::Config(format!(
            "config field `optimizer`: sweep-rank needs lorapre_adam or lorapre_muon, got {}",
            base.optimizer.name()
        )));
    }
    let mut configs = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let cfg = base.with_rank(rank);
        cfg.validate()?;
        configs.push((rank, cfg));
    }
    let dir = out_dir(&base, out);
    fs::create_dir_all(&dir)?;

    let results: Vec<Result<SweepRow, Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(rank, cfg)| {
                let sub = dir.join(format!("rank_{rank}"));
                scope.spawn(move || -> Result<SweepRow, Failure> {
                    let run = train(cfg)?;
                    let b = write_run(&sub, cfg, &run)?;
                    Ok(SweepRow {
                        rank: *rank,
                        e_ss: b.map(|b| b.e_ss),
                        run,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Failure::Other("sweep worker panicked".into()))))
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            row.rank,
            format_float(row.run.final_loss()),
            row.e_ss.map(format_float).unwrap_or_default(),
            row.run.memory.total,
            route_label(&row.run)
        );
    }
    write_atomic(&dir.join("sweep.csv"), &csv)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.rank as f64, r.run.final_loss())).collect();
    write_atomic(&dir.join("chart.svg"), &line_chart(&points, "rank", "final loss"))?;

    let aborted: Vec<String> = rows
        .iter()
        .filter_map(|r| r.run.aborted.as_ref().map(|a| format!("rank {}: {a}", r.rank)))
        .collect();
    if !aborted.is_empty() {
        return Err(Failure::Numeric(format!(
            "runs aborted ({}); partial outputs kept in {}",
            aborted.join("; "),
            dir.display()
        )));
    }
    for row in &rows {
        say!(
            "rank {:>4}: final loss {} ({})",
            row.rank,
            format_float(row.run.final_loss()),
            route_label(&row.run)
        );
    }
    say!("outputs in {}", dir.display());
    Ok(())
}
