//! Desk-scale objectives and the training loop.

pub mod csv;
mod problems;
mod training;

pub use problems::{
    gradient_self_test, low_rank_sensing_problem, quadratic_problem, step_grads, tiny_mlp_problem,
    MlpProblem, Problem, QuadraticProblem, SensingProblem,
};
pub use training::{
    run_training, LrSchedule, RunRecord, SecondMomentSeries, ShadowSeries, TrainingConfig,
    DEFAULT_STEPS,
};
pub use csv::{format_float, run_csv, RUN_CSV_HEADER};
