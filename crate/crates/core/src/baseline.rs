//! Euler-Lagrange linearisation of the pendulum about the upright
//! equilibrium, in `(cos θ, sin θ, θ̇)` coordinates, and MPC on it.

use crate::control::{run_episode, Controller, ControllerKind, EpisodeOptions, LinearPlant, MpcConfig};
use crate::env::{EnvParams, Observation, PendulumState, GOAL_OBSERVATION};
use crate::error::Result;
use crate::numerics::{expm, Matrix};
use crate::trajectory::TrajectoryRecord;

/// Linear model acting directly on `x − x*` (`C = I`).
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticalModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub goal: Observation,
}

impl AnalyticalModel {
    pub fn new(a: Matrix, b: Matrix) -> Self {
        Self {
            c: Matrix::identity(a.rows()),
            a,
            b,
            goal: GOAL_OBSERVATION,
        }
    }
}

impl LinearPlant for AnalyticalModel {
    fn a(&self) -> &Matrix {
        &self.a
    }

    fn b(&self) -> &Matrix {
        &self.b
    }

    fn c(&self) -> &Matrix {
        &self.c
    }

    fn lift(&self, x: &Observation) -> Vec<f64> {
        x.iter().zip(&self.goal).map(|(v, g)| v - g).collect()
    }

    fn decode_state(&self, z: &[f64]) -> Option<Observation> {
        Some([self.goal[0] + z[0], self.goal[1] + z[1], self.goal[2] + z[2]])
    }
}

/// The published zero-order-hold model at `dt = 0.05`. Stored verbatim: its
/// `A[1][2] = 0.05` is not reproducible from [`continuous_model`], whose
/// discretisation has `A[1][2] = 0`.
pub fn paper_zoh_model() -> AnalyticalModel {
    let a = Matrix::from_rows(&[
        vec![0.9988, -0.04998, 0.0],
        vec![0.04998, 0.9988, 0.05],
        vec![0.01875, 0.7497, 1.0],
    ]);
    let b = Matrix::column_vector(&[0.0, 0.0, 0.15]);
    AnalyticalModel::new(a, b)
}

/// Continuous-time linearisation `ẋ = A x + B u`.
pub fn continuous_model(params: &EnvParams) -> (Matrix, Matrix) {
    let a = Matrix::from_rows(&[
        vec![0.0, -1.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![0.0, 3.0 * params.gravity / (2.0 * params.length), 0.0],
    ]);
    let b = Matrix::column_vector(&[0.0, 0.0, 3.0 / (params.mass * params.length * params.length)]);
    (a, b)
}

/// Diagnostic zero-order-hold discretisation of [`continuous_model`] via the
/// augmented exponential of `[[A, B], [0, 0]]·dt`. Never used for control.
pub fn discretize_continuous(params: &EnvParams) -> Result<(Matrix, Matrix)> {
    let (a, b) = continuous_model(params);
    let n = a.rows();
    let aug = Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i < n && j < n {
            a[(i, j)]
        } else if i < n && j == n {
            b[(i, 0)]
        } else {
            0.0
        }
    });
    let e = expm(&aug, params.dt)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, 1)))
}

/// Receding-horizon MPC on [`paper_zoh_model`].
pub fn run_analytical_mpc(init: PendulumState, steps: usize, config: &MpcConfig) -> Result<TrajectoryRecord> {
    let model = paper_zoh_model();
    let mut controller = Controller::build(&model, ControllerKind::Mpc, config)?;
    let mut record = TrajectoryRecord::new("analytical", "", 0);
    run_episode(&model, &mut controller, init, &EpisodeOptions::new(steps), &mut record)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn published_constants() {
        let m = paper_zoh_model();
        assert_eq!(m.a[(0, 0)], 0.9988);
        assert_eq!(m.a[(1, 2)], 0.05);
        assert_eq!(m.b[(2, 0)], 0.15);
        assert_eq!(m.c, Matrix::identity(3));
    }

    #[test]
    fn continuous_constants() {
        let (a, b) = continuous_model(&EnvParams::default());
        assert_eq!(a[(2, 1)], 15.0);
        assert_eq!(b[(2, 0)], 3.0);
        assert!((0..3).all(|i| a[(i, 2)] == 0.0));
    }

    #[test]
    fn discretization_disagrees_with_published_model() {
        let (ad, bd) = discretize_continuous(&EnvParams::default()).unwrap();
        assert_eq!([ad[(0, 2)], ad[(1, 2)], ad[(2, 2)]], [0.0, 0.0, 1.0]);
        assert_ne!(ad[(1, 2)], paper_zoh_model().a[(1, 2)]);
        assert!((ad[(0, 0)] - 0.05f64.cos()).abs() < 1e-12);
        assert!((bd[(2, 0)] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn lift_and_decode_are_inverse() {
        let m = paper_zoh_model();
        let x = [0.3, -0.9, 2.5];
        let z = m.lift(&x);
        assert_eq!(m.lift(&GOAL_OBSERVATION), vec![0.0; 3]);
        let back = m.decode_state(&z).unwrap();
        for i in 0..3 {
            assert!((back[i] - x[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn stabilizes_near_upright_and_fails_from_bottom() {
        let cfg = MpcConfig::default();
        let near = run_analytical_mpc(PendulumState::new(PI / 18.0, 0.5), 200, &cfg).unwrap();
        assert!(near.succeeded(), "terminal cost {}", near.terminal_cost(20));
        assert!(near.rows.iter().all(|r| r.u.abs() <= 2.0));
        let low = run_analytical_mpc(PendulumState::new(PI, 1.0), 400, &cfg).unwrap();
        assert!(!low.succeeded());
    }
}
