//! Dense linear algebra: the matrix type, damped pseudo-inverses, a Jacobi SVD
//! oracle and the Newton–Schulz orthogonalizer.

mod matrix;
mod newton_schulz;
mod pinv;
mod svd;

pub use matrix::{abs_elementwise, hadamard_square, matmul, Matrix};
pub use newton_schulz::{
    newton_schulz, newton_schulz5, NsSchedule, MUON_QUINTIC, NS_DEFAULT_ITERATIONS,
    NS_NORM_GUARD, POLAR_EXPRESS,
};
pub use pinv::{damped_left_pinv, damped_right_pinv, Cholesky};
pub use svd::{spectral_norm, svd_small, SvdResult, SVD_MAX_DIM, SVD_MAX_SWEEPS};
