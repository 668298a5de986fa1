//! Deep Koopman representation for control on the swing-up pendulum, with a
//! DDPG model-free baseline and an Euler-Lagrange linearization baseline.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense linear algebra, Riccati, matrix exponential, box QP
//! * [`nnet`]: small MLPs with hand-written backprop and Adam
//! * [`env`]: the pendulum environment
//! * [`dkrc`]: encoder training and lifted linear model identification
//! * [`control`]: MPC and LQR on lifted models
//! * [`ddpg`]: actor-critic baseline
//! * [`baseline`]: the analytical ZOH model
//! * [`harness`]: experiment orchestration and CSV/JSON export

pub mod baseline;
pub mod control;
pub mod ddpg;
pub mod dkrc;
pub mod env;
pub mod error;
pub mod harness;
pub mod nnet;
pub mod numerics;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
