//! Low-rank factorized optimizer momentum.
//!
//! Adam and Muon keep a full `p x q` momentum per weight matrix. This crate
//! stores each momentum as a factor pair `B (p x r) · A (r x q)` and advances the
//! factors with closed-form Newton steps on an online least-squares objective,
//! so state memory drops from `pq` to `(p + q) r` entries.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod regressor;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
