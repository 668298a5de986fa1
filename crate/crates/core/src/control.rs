//! Model-based controllers on identified linear models: condensed MPC with
//! box-constrained torque, infinite-horizon LQR, and the receding-horizon
//! episode loop.

use serde::{Deserialize, Serialize};

use crate::dkrc::LiftedLinearModel;
use crate::env::{self, EnvParams, ObservationNoise, Observation, PendulumState};
use crate::error::{invalid, Result};
use crate::numerics::{dare_iterate, solve_box_qp_with, BoxQpOptions, Matrix, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use crate::rng;
use crate::trajectory::{TrajectoryRecord, TrajectoryRow};

/// A linear model `z' = A z + B u` on lifted coordinates, with `C` mapping
/// lifted states to goal-relative observations.
pub trait LinearPlant {
    fn a(&self) -> &Matrix;
    fn b(&self) -> &Matrix;
    fn c(&self) -> &Matrix;
    fn lift(&self, x: &Observation) -> Vec<f64>;
    /// Lifted state back to an observation, for plan visualisation.
    fn decode_state(&self, z: &[f64]) -> Option<Observation>;
}

impl LinearPlant for LiftedLinearModel {
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
        LiftedLinearModel::lift(self, x)
    }

    fn decode_state(&self, z: &[f64]) -> Option<Observation> {
        self.decode(z).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Weight on `(cos θ − 1, sin θ, θ̇)`.
    pub q_state: Matrix,
    pub r_control: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    /// Start each solve from the previous plan shifted by one step.
    pub warm_start: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            q_state: Matrix::diag(&[1.0, 1.0, 0.1]),
            r_control: 0.001,
            u_min: -2.0,
            u_max: 2.0,
            qp_tol: 1e-8,
            qp_max_iter: 100_000,
            warm_start: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if !(self.r_control > 0.0) {
            return Err(invalid("r_control must be positive"));
        }
        if !(self.u_min <= self.u_max) {
            return Err(invalid("u_min exceeds u_max"));
        }
        if !self.q_state.is_square() || !self.q_state.is_finite() {
            return Err(invalid("q_state must be a finite square matrix"));
        }
        Ok(())
    }
}

/// `CᵀQC`, symmetrized.
pub fn build_lifted_cost(c: &Matrix, q_state: &Matrix) -> Result<Matrix> {
    if q_state.shape() != (c.rows(), c.rows()) {
        return Err(invalid(format!(
            "Q is {:?} but C has {} rows",
            q_state.shape(),
            c.rows()
        )));
    }
    Ok(c.transpose().matmul(q_state).matmul(c).symmetrized())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub u_plan: Vec<f64>,
    /// `horizon + 1` lifted states starting at `z0`.
    pub z_plan: Vec<Vec<f64>>,
    pub objective: f64,
}

/// Condensed MPC problem for a fixed model and weights. The QP Hessian does
/// not depend on the initial state, so it is built once.
#[derive(Debug, Clone)]
pub struct MpcController {
    a: Matrix,
    b: Matrix,
    q_lifted: Matrix,
    config: MpcConfig,
    /// ½·QP Hessian: ΓᵀQ̄Γ + R·I.
    hessian: Matrix,
    /// Linear-term map: g = 2·ΓᵀQ̄Φ·z0.
    linear: Matrix,
    /// Constant-term map: z0ᵀ(ΦᵀQ̄Φ)z0.
    constant: Matrix,
    last_plan: Option<Vec<f64>>,
}

impl MpcController {
    pub fn new(a: &Matrix, b: &Matrix, q_lifted: &Matrix, config: &MpcConfig) -> Result<Self> {
        config.validate()?;
        let n = a.rows();
        if !a.is_square() || b.shape() != (n, 1) || q_lifted.shape() != (n, n) {
            return Err(invalid("MPC needs A (N×N), B (N×1) and Q (N×N)"));
        }
        let h = config.horizon;
        // powers[k] = A^k for k = 0..=H
        let mut powers = vec![Matrix::identity(n)];
        for k in 0..h {
            powers.push(powers[k].matmul(a));
        }
        // impulse[k] = A^k B
        let bcol = b.column(0);
        let impulse: Vec<Vec<f64>> = powers.iter().map(|p| p.mat_vec(&bcol)).collect();
        // Q-weighted copies used in the sums.
        let q_impulse: Vec<Vec<f64>> = impulse.iter().map(|v| q_lifted.mat_vec(v)).collect();

        // Γ column j at stage k (k ≥ j+1) is A^{k−1−j} B.
        let mut hessian = Matrix::zeros(h, h);
        for i in 0..h {
            for j in i..h {
                let mut acc = 0.0;
                for k in (j + 1)..=h {
                    acc += crate::numerics::dot(&impulse[k - 1 - i], &q_impulse[k - 1 - j]);
                }
                hessian[(i, j)] = acc;
                hessian[(j, i)] = acc;
            }
            hessian[(i, i)] += config.r_control;
        }

        let mut linear = Matrix::zeros(h, n);
        let mut constant = Matrix::zeros(n, n);
        for k in 1..=h {
            let qphi = q_lifted.matmul(&powers[k]);
            constant = &constant + &powers[k].transpose().matmul(&qphi);
            for i in 0..k {
                let row = qphi.tr_mat_vec(&impulse[k - 1 - i]);
                for (l, v) in linear.row_mut(i).iter_mut().zip(row) {
                    *l += 2.0 * v;
                }
            }
        }
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            q_lifted: q_lifted.clone(),
            config: config.clone(),
            hessian,
            linear,
            constant,
            last_plan: None,
        })
    }

    pub fn for_plant<P: LinearPlant + ?Sized>(plant: &P, config: &MpcConfig) -> Result<Self> {
        let q = build_lifted_cost(plant.c(), &config.q_state)?;
        Self::new(plant.a(), plant.b(), &q, config)
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Forgets the warm-start plan.
    pub fn reset(&mut self) {
        self.last_plan = None;
    }

    pub fn plan(&mut self, z0: &[f64]) -> Result<PlanResult> {
        let h = self.config.horizon;
        if z0.len() != self.a.rows() {
            return Err(invalid("initial lifted state has the wrong dimension"));
        }
        let g = self.linear.mat_vec(z0);
        let qp_h = self.hessian.scale(2.0);
        let warm = if self.config.warm_start {
            self.last_plan.as_ref().map(|p| {
                let mut w: Vec<f64> = p[1..].to_vec();
                w.push(0.0);
                w
            })
        } else {
            None
        };
        let opts = BoxQpOptions {
            tol: self.config.qp_tol,
            max_iter: self.config.qp_max_iter,
            accelerate: true,
            warm_start: warm,
        };
        let lower = vec![self.config.u_min; h];
        let upper = vec![self.config.u_max; h];
        let sol = solve_box_qp_with(&qp_h, &g, &lower, &upper, &opts)?;
        let constant = crate::numerics::dot(z0, &self.constant.mat_vec(z0));
        let plan = self.rollout(z0, sol.u, sol.objective + constant);
        self.last_plan = Some(plan.u_plan.clone());
        Ok(plan)
    }

    fn rollout(&self, z0: &[f64], u_plan: Vec<f64>, objective: f64) -> PlanResult {
        let mut z_plan = vec![z0.to_vec()];
        for u in &u_plan {
            let prev = z_plan.last().unwrap();
            let mut next = self.a.mat_vec(prev);
            for (z, b) in next.iter_mut().zip(self.b.column(0)) {
                *z += b * u;
            }
            z_plan.push(next);
        }
        PlanResult {
            u_plan,
            z_plan,
            objective,
        }
    }

    /// Stage-cost sum of a plan: Σ_{k=1..H} z_kᵀ Q z_k + R Σ u_k².
    pub fn plan_cost(&self, plan: &PlanResult) -> f64 {
        let state: f64 = plan.z_plan[1..]
            .iter()
            .map(|z| crate::numerics::dot(z, &self.q_lifted.mat_vec(z)))
            .sum();
        state + self.config.r_control * plan.u_plan.iter().map(|u| u * u).sum::<f64>()
    }
}

/// One-off MPC plan from `z0`.
pub fn mpc_plan<P: LinearPlant + ?Sized>(plant: &P, z0: &[f64], config: &MpcConfig) -> Result<PlanResult> {
    MpcController::for_plant(plant, config)?.plan(z0)
}

/// Lifts `x`, plans, and returns the first control with the plan.
pub fn mpc_step<P: LinearPlant + ?Sized>(plant: &P, controller: &mut MpcController, x: &Observation) -> Result<(f64, PlanResult)> {
    let z = plant.lift(x);
    let plan = controller.plan(&z)?;
    Ok((plan.u_plan[0], plan))
}

/// LQR gain from the Riccati fixed point on `(A, B, CᵀQC, R)`.
pub fn lqr_gain<P: LinearPlant + ?Sized>(plant: &P, config: &MpcConfig) -> Result<Matrix> {
    let q = build_lifted_cost(plant.c(), &config.q_state)?;
    lqr_gain_from(plant.a(), plant.b(), &q, config.r_control)
}

pub fn lqr_gain_from(a: &Matrix, b: &Matrix, q: &Matrix, r: f64) -> Result<Matrix> {
    let sol = dare_iterate(a, b, q, &Matrix::from_rows(&[[r]]), DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
    Ok(sol.gain().clone())
}

/// Spectral radius of `A − B K` via `ρ = lim ‖M^p‖^{1/p}`, using repeated
/// squaring with renormalisation.
pub fn closed_loop_spectral_radius(a: &Matrix, b: &Matrix, k: &Matrix) -> f64 {
    let mut m = a - &b.matmul(k);
    let mut log_scale = 0.0;
    let mut p = 1.0;
    for _ in 0..30 {
        m = m.matmul(&m);
        p *= 2.0;
        let nrm = m.frobenius_norm();
        if nrm == 0.0 {
            return 0.0;
        }
        m = m.scale(1.0 / nrm);
        log_scale = 2.0 * log_scale + nrm.ln();
    }
    (log_scale / p).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Mpc,
    Lqr,
}

/// Stateful feedback law used by the episode loop.
pub enum Controller {
    Mpc(MpcController),
    Lqr { gain: Matrix, a: Matrix, b: Matrix, u_min: f64, u_max: f64 },
}

impl Controller {
    pub fn build<P: LinearPlant + ?Sized>(plant: &P, kind: ControllerKind, config: &MpcConfig) -> Result<Self> {
        Ok(match kind {
            ControllerKind::Mpc => Controller::Mpc(MpcController::for_plant(plant, config)?),
            ControllerKind::Lqr => Controller::Lqr {
                gain: lqr_gain(plant, config)?,
                a: plant.a().clone(),
                b: plant.b().clone(),
                u_min: config.u_min,
                u_max: config.u_max,
            },
        })
    }

    /// Control for lifted state `z` and the predicted next lifted state.
    pub fn act(&mut self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Controller::Mpc(mpc) => {
                let plan = mpc.plan(z)?;
                Ok((plan.u_plan[0], plan.z_plan[1].clone()))
            }
            Controller::Lqr { gain, a, b, u_min, u_max } => {
                let u = (-crate::numerics::dot(gain.row(0), z)).clamp(*u_min, *u_max);
                let mut next = a.mat_vec(z);
                for (n, bv) in next.iter_mut().zip(b.column(0)) {
                    *n += bv * u;
                }
                Ok((u, next))
            }
        }
    }
}

/// Options for [`run_episode`].
#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub steps: usize,
    pub noise: Option<ObservationNoise>,
    pub noise_seed: u64,
    pub params: EnvParams,
}

impl EpisodeOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            noise: None,
            noise_seed: 0,
            params: EnvParams::default(),
        }
    }
}

/// Receding-horizon loop: observe (optionally noised), lift, act, step.
/// Each row also carries where the previous step's plan expected the
/// pendulum to be, decoded to an observation.
pub fn run_episode<P: LinearPlant + ?Sized>(
    plant: &P,
    controller: &mut Controller,
    init: PendulumState,
    opts: &EpisodeOptions,
    record: &mut TrajectoryRecord,
) -> Result<()> {
    if let Controller::Mpc(m) = controller {
        m.reset();
    }
    let mut noise_rng = rng::seeded(opts.noise_seed);
    let mut state = init;
    let mut expected: Option<Observation> = None;
    for t in 0..opts.steps {
        let clean = state.observation();
        let observed = match &opts.noise {
            Some(n) => n.apply(&clean, &mut noise_rng),
            None => clean,
        };
        let z = plant.lift(&observed);
        let (u, z_next) = controller.act(&z)?;
        let u = opts.params.clamp_torque(u);
        let planned = expected.or_else(|| plant.decode_state(&z));
        let (next, cost) = env::step(&state, u, &opts.params)?;
        record.rows.push(TrajectoryRow {
            t,
            theta: state.theta,
            theta_dot: state.theta_dot,
            u,
            cost,
            energy: env::energy(&state, u),
            planned,
        });
        expected = plant.decode_state(&z_next);
        state = next;
    }
    Ok(())
}
