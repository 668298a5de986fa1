//! Dense linear algebra and control-theory kernels.

mod expm;
mod matrix;
mod qp;
mod riccati;
mod svd;
mod system;

pub use expm::expm;
pub use matrix::Matrix;
pub use qp::{solve_box_qp, solve_box_qp_with, BoxQpOptions, BoxQpSolution, DEFAULT_QP_MAX_ITER, DEFAULT_QP_TOL};
pub use riccati::{dare_iterate, riccati_map, RiccatiSolution, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
pub use svd::{default_pinv_rel_tol, pinv, rank, svd, SvdResult, DEFAULT_RANK_TOL};
pub use system::{controllability, solve_normal_equation};

pub(crate) use matrix::dot;
