//! Deep Koopman representation for control.
//!
//! An encoder `ψ` lifts the 3-component observation into `N` dimensions,
//! shifted so the goal maps to the origin: `z(x) = ψ(x) − ψ(x*)`. With state
//! pass-through the first three coordinates are `x − x*` itself and the
//! network supplies the remaining `N − 3`. Training
//! pushes the lifted snapshots towards linear evolution; afterwards a
//! linear model `z' = A z + B u` is identified by least squares, and
//! `C` maps lifted states back to goal-relative observations.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvParams, Observation, Transition, GOAL_OBSERVATION, MAX_SPEED};
use crate::error::{invalid, Error, Result};
use crate::nnet::{Activation, AdamConfig, MlpNetwork, NetworkCheckpoint};
use crate::numerics::{controllability, pinv, rank, solve_normal_equation, Matrix};
use crate::rng;

pub const STATE_DIM: usize = 3;
pub const CONTROL_DIM: usize = 1;
pub const DEFAULT_LIFT_DIM: usize = 8;
pub const DEFAULT_EPOCHS: usize = 70;
pub const DEFAULT_HIDDEN: usize = 64;

/// Snapshot pairs, one column per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkrcDataset {
    /// 3×K observations.
    pub x: Matrix,
    /// 1×K torques.
    pub u: Matrix,
    /// 3×K successor observations.
    pub x_next: Matrix,
}

impl DkrcDataset {
    pub fn new(x: Matrix, u: Matrix, x_next: Matrix) -> Result<Self> {
        let k = x.cols();
        if x.rows() != STATE_DIM || x_next.rows() != STATE_DIM || u.rows() != CONTROL_DIM {
            return Err(invalid("dataset rows must be 3 (x, x_next) and 1 (u)"));
        }
        if u.cols() != k || x_next.cols() != k {
            return Err(invalid("dataset column counts differ"));
        }
        if u.as_slice().iter().any(|v| v.abs() > 2.0) {
            return Err(invalid("dataset torque outside [-2, 2]"));
        }
        if (0..k).any(|j| x[(2, j)].abs() > MAX_SPEED || x_next[(2, j)].abs() > MAX_SPEED) {
            return Err(invalid("dataset angular velocity outside [-8, 8]"));
        }
        Ok(Self { x, u, x_next })
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(invalid("no transitions"));
        }
        let k = ts.len();
        let x = Matrix::from_fn(STATE_DIM, k, |i, j| ts[j].x[i]);
        let x_next = Matrix::from_fn(STATE_DIM, k, |i, j| ts[j].x_next[i]);
        let u = Matrix::from_fn(1, k, |_, j| ts[j].u);
        Self::new(x, u, x_next)
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columns `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> DkrcDataset {
        let pick = |m: &Matrix| Matrix::from_fn(m.rows(), idx.len(), |i, j| m[(i, idx[j])]);
        DkrcDataset {
            x: pick(&self.x),
            u: pick(&self.u),
            x_next: pick(&self.x_next),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        let raw: DkrcDataset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(raw.x, raw.u, raw.x_next)
    }
}

/// Random-reset rollouts under uniform random torque in `[−2, 2]`.
pub fn collect_dataset(episodes: usize, steps_per_episode: usize, seed: u64) -> Result<DkrcDataset> {
    if episodes * steps_per_episode < 2000 {
        return Err(invalid(format!(
            "{episodes} x {steps_per_episode} samples is below the 2000 minimum"
        )));
    }
    let params = EnvParams::default();
    let mut transitions = Vec::with_capacity(episodes * steps_per_episode);
    for ep in 0..episodes {
        let mut rng = rng::derived(seed, ep as u64);
        let mut state = env::random_state(&mut rng);
        for _ in 0..steps_per_episode {
            let u = rng.random_range(-params.max_torque..=params.max_torque);
            let (next, cost) = env::step(&state, u, &params)?;
            transitions.push(Transition {
                x: state.observation(),
                u,
                cost,
                x_next: next.observation(),
            });
            state = next;
        }
    }
    DkrcDataset::from_transitions(&transitions)
}

/// `L1 = mean_k ‖z'_k − K z_k‖` with `K = z' · z⁺`. Returns the loss and `K`.
pub fn loss_l1(z_next: &Matrix, z_cur: &Matrix) -> Result<(f64, Matrix)> {
    if z_next.shape() != z_cur.shape() {
        return Err(invalid("z_next and z_cur shapes differ"));
    }
    if rank(z_cur, None)? < 1 {
        return Err(invalid("lifted snapshots are degenerate"));
    }
    let k_op = z_next.matmul(&pinv(z_cur, None)?);
    let resid = z_next - &k_op.matmul(z_cur);
    Ok((mean_column_norm(&resid), k_op))
}

fn mean_column_norm(m: &Matrix) -> f64 {
    let mut norms = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (n, v) in norms.iter_mut().zip(m.row(i)) {
            *n += v * v;
        }
    }
    norms.iter().map(|s| s.sqrt()).sum::<f64>() / m.cols() as f64
}

/// Controllability rank deficit of `(A, B)`.
pub fn rank_deficit(a: &Matrix, b: &Matrix) -> Result<usize> {
    let r = rank(&controllability(a, b)?, None)?;
    Ok(a.rows() - r)
}

/// `(N − rank ctrb(A, B)) + ‖A‖₁ + ‖B‖₁`, entrywise norms.
pub fn loss_l2(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(rank_deficit(a, b)? as f64 + a.entrywise_l1() + b.entrywise_l1())
}

/// Least-squares `(A, B)` for `z' ≈ A z + B u`.
pub fn identify(z_next: &Matrix, z_cur: &Matrix, u: &Matrix) -> Result<(Matrix, Matrix)> {
    let m = solve_normal_equation(z_next, z_cur, u)?;
    let n = z_cur.rows();
    Ok((m.block(0, 0, n, n), m.block(0, n, n, u.rows())))
}

/// `C = x · z⁺` and the mean column residual `‖C z − x‖`.
pub fn recover_c(x: &Matrix, z: &Matrix) -> Result<(Matrix, f64)> {
    if x.cols() != z.cols() {
        return Err(invalid("x and z sample counts differ"));
    }
    if z.cols() < z.rows() {
        return Err(Error::Underdetermined {
            samples: z.cols(),
            unknowns: z.rows(),
        });
    }
    if rank(z, None)? < 1 {
        return Err(invalid("lifted snapshots are degenerate"));
    }
    let c = x.matmul(&pinv(z, None)?);
    let resid = mean_column_norm(&(x - &c.matmul(z)));
    Ok((c, resid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DkrcTrainConfig {
    pub n_lift: usize,
    /// Lift as `[x − x*; ψ(x) − ψ(x*)]` with a network of `N − 3` outputs.
    pub state_passthrough: bool,
    pub epochs: usize,
    /// `None` trains on the full dataset each epoch.
    pub batch_size: Option<usize>,
    pub lr: f64,
    /// Weight of `‖A‖₁ + ‖B‖₁` in the monitored total loss.
    pub l1_reg_weight: f64,
    /// Weight of the decoder reconstruction loss relative to L1.
    pub recon_weight: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DkrcTrainConfig {
    fn default() -> Self {
        Self {
            n_lift: DEFAULT_LIFT_DIM,
            state_passthrough: true,
            epochs: DEFAULT_EPOCHS,
            batch_size: None,
            lr: 1e-3,
            l1_reg_weight: 1e-4,
            recon_weight: 0.1,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl DkrcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lift == 0 || self.epochs == 0 || self.hidden == 0 || self.batch_size == Some(0) {
            return Err(invalid("n_lift, epochs, hidden and batch_size must be positive"));
        }
        if self.state_passthrough && self.n_lift <= STATE_DIM {
            return Err(invalid("state pass-through needs n_lift above the state dimension"));
        }
        if !(self.lr > 0.0 && self.l1_reg_weight >= 0.0 && self.recon_weight >= 0.0) {
            return Err(invalid("lr must be positive and loss weights non-negative"));
        }
        Ok(())
    }
}

/// Per-epoch loss curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// L1 evaluated on the full dataset before each epoch's update, plus
    /// one final entry after training.
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub rank_deficit: Vec<usize>,
    pub reconstruction: Vec<f64>,
    /// Total monitored loss `L1 + deficit + w·(‖A‖₁ + ‖B‖₁)`.
    pub total: Vec<f64>,
    pub final_c_residual: f64,
}

impl TrainReport {
    pub fn initial_l1(&self) -> f64 {
        self.l1.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_l1(&self) -> f64 {
        self.l1.last().copied().unwrap_or(f64::NAN)
    }
}

/// The identified lifted linear model together with its networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedLinearModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub goal: Observation,
    pub encoder: MlpNetwork,
    pub decoder: MlpNetwork,
    encoder_goal: Vec<f64>,
    state_passthrough: bool,
    /// Set when the identified pair is not fully controllable.
    pub controllability_warning: Option<String>,
}

impl LiftedLinearModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, goal: Observation, encoder: MlpNetwork, decoder: MlpNetwork) -> Result<Self> {
        let n = a.rows();
        let state_passthrough = passthrough_for(&encoder, n)?;
        if a.shape() != (n, n) || b.shape() != (n, CONTROL_DIM) || c.shape() != (STATE_DIM, n) {
            return Err(invalid(format!(
                "model shapes A {:?}, B {:?}, C {:?} do not match lift dimension {n}",
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        if encoder.input_size() != STATE_DIM || decoder.input_size() != n || decoder.output_size() != STATE_DIM {
            return Err(invalid("encoder/decoder dimensions are inconsistent"));
        }
        let encoder_goal = encoder.forward(&goal)?;
        let deficit = rank_deficit(&a, &b)?;
        let controllability_warning =
            (deficit > 0).then(|| format!("identified (A, B) has controllability rank deficit {deficit}"));
        Ok(Self {
            a,
            b,
            c,
            goal,
            encoder,
            decoder,
            encoder_goal,
            state_passthrough,
            controllability_warning,
        })
    }

    pub fn n_lift(&self) -> usize {
        self.a.rows()
    }

    pub fn state_passthrough(&self) -> bool {
        self.state_passthrough
    }

    /// `z = ψ(x) − ψ(x*)`, prefixed by `x − x*` with state pass-through.
    pub fn lift(&self, x: &Observation) -> Vec<f64> {
        let e = self.encoder.forward(x).expect("encoder input is 3-dimensional");
        let code = Matrix::from_rows(&[e]);
        let xs = Matrix::from_rows(&[x]);
        assemble_lift(&xs, &code, &self.goal, &self.encoder_goal, self.state_passthrough)
            .row(0)
            .to_vec()
    }

    /// Lifts the columns of a 3×K matrix into an N×K matrix.
    pub fn lift_columns(&self, x: &Matrix) -> Result<Matrix> {
        let xs = x.transpose();
        let cache = self.encoder.forward_batch(&xs)?;
        Ok(assemble_lift(&xs, cache.output(), &self.goal, &self.encoder_goal, self.state_passthrough).transpose())
    }

    /// `x* + C z`.
    pub fn project(&self, z: &[f64]) -> Observation {
        let cz = self.c.mat_vec(z);
        [self.goal[0] + cz[0], self.goal[1] + cz[1], self.goal[2] + cz[2]]
    }

    /// Next observation predicted through the lifted linear model.
    pub fn one_step_predict(&self, x: &Observation, u: f64) -> Observation {
        let z = self.lift(x);
        let mut next = self.a.mat_vec(&z);
        for (n, b) in next.iter_mut().zip(self.b.column(0)) {
            *n += b * u;
        }
        self.project(&next)
    }

    /// Decoder network applied to a lifted state.
    pub fn decode(&self, z: &[f64]) -> Result<Observation> {
        let y = self.decoder.forward(z)?;
        Ok([y[0], y[1], y[2]])
    }

    pub fn rank_deficit(&self) -> usize {
        rank_deficit(&self.a, &self.b).unwrap_or(self.n_lift())
    }

    pub fn to_export(&self) -> ModelExport {
        ModelExport {
            n_lift: self.n_lift(),
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            goal: self.goal,
            encoder: self.encoder.to_checkpoint(),
            decoder: self.decoder.to_checkpoint(),
        }
    }

    pub fn from_export(e: ModelExport) -> Result<Self> {
        let m = Self::new(
            e.a,
            e.b,
            e.c,
            e.goal,
            MlpNetwork::from_checkpoint(e.encoder)?,
            MlpNetwork::from_checkpoint(e.decoder)?,
        )?;
        if m.n_lift() != e.n_lift {
            return Err(invalid("n_lift disagrees with matrix shapes"));
        }
        Ok(m)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_export())?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        Self::from_export(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub n_lift: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub goal: Observation,
    pub encoder: NetworkCheckpoint,
    pub decoder: NetworkCheckpoint,
}

/// Identifies `(A, B)` on the whole dataset and `C` from goal-relative
/// observations, for a fixed encoder/decoder pair.
pub fn fit_linear_model(dataset: &DkrcDataset, encoder: MlpNetwork, decoder: MlpNetwork, goal: Observation) -> Result<(LiftedLinearModel, f64)> {
    let n = decoder.input_size();
    let state_passthrough = passthrough_for(&encoder, n)?;
    // Placeholder matrices so lift() can be used before identification.
    let mut model = LiftedLinearModel {
        a: Matrix::zeros(n, n),
        b: Matrix::zeros(n, 1),
        c: Matrix::zeros(STATE_DIM, n),
        goal,
        encoder_goal: encoder.forward(&goal)?,
        encoder,
        decoder,
        state_passthrough,
        controllability_warning: None,
    };
    let z = model.lift_columns(&dataset.x)?;
    let z_next = model.lift_columns(&dataset.x_next)?;
    let (a, b) = identify(&z_next, &z, &dataset.u)?;
    let shifted = goal_relative(&dataset.x, &goal);
    let (c, resid) = recover_c(&shifted, &z)?;
    model = LiftedLinearModel::new(a, b, c, goal, model.encoder, model.decoder)?;
    Ok((model, resid))
}

/// Whether an encoder with this output width lifts to `n` with pass-through.
fn passthrough_for(encoder: &MlpNetwork, n: usize) -> Result<bool> {
    match encoder.output_size() {
        m if m == n => Ok(false),
        m if m + STATE_DIM == n => Ok(true),
        m => Err(invalid(format!("encoder width {m} does not fit lift dimension {n}"))),
    }
}

/// Sample-major lifted rows from sample-major observations and codes.
fn assemble_lift(x: &Matrix, code: &Matrix, goal: &Observation, goal_code: &[f64], passthrough: bool) -> Matrix {
    let off = if passthrough { STATE_DIM } else { 0 };
    Matrix::from_fn(code.rows(), off + code.cols(), |s, j| {
        if j < off {
            x[(s, j)] - goal[j]
        } else {
            code[(s, j - off)] - goal_code[j - off]
        }
    })
}

fn goal_relative(x: &Matrix, goal: &Observation) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - goal[i])
}

/// Encoder/decoder topology: tanh hidden layers, linear outputs.
pub fn build_networks(config: &DkrcTrainConfig, rng: &mut rng::SimRng) -> Result<(MlpNetwork, MlpNetwork)> {
    let h = config.hidden;
    let acts = [Activation::Tanh, Activation::Tanh, Activation::Linear];
    let width = if config.state_passthrough { config.n_lift - STATE_DIM } else { config.n_lift };
    let encoder = MlpNetwork::new(&[STATE_DIM, h, h, width], &acts, rng)?;
    let decoder = MlpNetwork::new(&[config.n_lift, h, h, STATE_DIM], &acts, rng)?;
    Ok((encoder, decoder))
}

/// Trains encoder and decoder, then identifies the lifted linear model.
///
/// Each step lifts the batch, fits `K` and `(A, B)` on it, and
/// backpropagates L1 with `K` held fixed plus the weighted reconstruction
/// loss `‖decoder(z(x)) − x‖²`.
pub fn train(dataset: &DkrcDataset, config: &DkrcTrainConfig) -> Result<(LiftedLinearModel, TrainReport)> {
    config.validate()?;
    let k = dataset.len();
    let batch = config.batch_size.unwrap_or(k).min(k);
    if batch < config.n_lift + CONTROL_DIM {
        return Err(Error::Underdetermined {
            samples: batch,
            unknowns: config.n_lift + CONTROL_DIM,
        });
    }
    let mut rng = rng::seeded(config.seed);
    let (mut encoder, mut decoder) = build_networks(config, &mut rng)?;
    let adam = AdamConfig::with_lr(config.lr);
    let goal = GOAL_OBSERVATION;
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..k).collect();

    for epoch in 0..config.epochs {
        let full = evaluate(&encoder, &decoder, dataset, &goal, config)?;
        report.push(&full, config);
        if !full.l1.is_finite() {
            return Err(Error::Diverged(format!("L1 is not finite at epoch {epoch}")));
        }

        if batch < k {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            if chunk.len() < config.n_lift + CONTROL_DIM {
                continue;
            }
            let part;
            let data = if batch < k {
                part = dataset.subset(chunk);
                &part
            } else {
                dataset
            };
            let (ge, gd) = gradients(&encoder, &decoder, data, &goal, config)?;
            encoder.adam_step(&ge, &adam)?;
            decoder.adam_step(&gd, &adam)?;
        }
    }

    let last = evaluate(&encoder, &decoder, dataset, &goal, config)?;
    report.push(&last, config);
    if !last.l1.is_finite() {
        return Err(Error::Diverged("L1 is not finite after training".into()));
    }
    let (model, resid) = fit_linear_model(dataset, encoder, decoder, goal)?;
    report.final_c_residual = resid;
    Ok((model, report))
}

struct Evaluation {
    l1: f64,
    l2_deficit: usize,
    l2_norms: f64,
    recon: f64,
}

impl TrainReport {
    fn push(&mut self, e: &Evaluation, config: &DkrcTrainConfig) {
        self.l1.push(e.l1);
        self.l2.push(e.l2_deficit as f64 + e.l2_norms);
        self.rank_deficit.push(e.l2_deficit);
        self.reconstruction.push(e.recon);
        self.total
            .push(e.l1 + e.l2_deficit as f64 + config.l1_reg_weight * e.l2_norms);
    }
}

/// Lifted snapshots in sample-major layout (K×N).
struct Lifted {
    z: Matrix,
    z_next: Matrix,
    enc_x: crate::nnet::BatchCache,
    enc_next: crate::nnet::BatchCache,
    goal_code: Vec<f64>,
}

fn lift_batch(encoder: &MlpNetwork, data: &DkrcDataset, goal: &Observation, passthrough: bool) -> Result<Lifted> {
    let xs = data.x.transpose();
    let xs_next = data.x_next.transpose();
    let enc_x = encoder.forward_batch(&xs)?;
    let enc_next = encoder.forward_batch(&xs_next)?;
    let goal_code = encoder.forward(goal)?;
    Ok(Lifted {
        z: assemble_lift(&xs, enc_x.output(), goal, &goal_code, passthrough),
        z_next: assemble_lift(&xs_next, enc_next.output(), goal, &goal_code, passthrough),
        enc_x,
        enc_next,
        goal_code,
    })
}

fn evaluate(encoder: &MlpNetwork, decoder: &MlpNetwork, data: &DkrcDataset, goal: &Observation, config: &DkrcTrainConfig) -> Result<Evaluation> {
    let lifted = lift_batch(encoder, data, goal, config.state_passthrough)?;
    let zt = lifted.z.transpose();
    let znt = lifted.z_next.transpose();
    if !zt.is_finite() || !znt.is_finite() {
        return Err(Error::Diverged("lifted states are not finite".into()));
    }
    let (l1, _) = loss_l1(&znt, &zt)?;
    let (a, b) = identify(&znt, &zt, &data.u)?;
    let deficit = rank_deficit(&a, &b)?;
    let recon = if config.recon_weight > 0.0 {
        let dec = decoder.forward_batch(&lifted.z)?;
        reconstruction_error(dec.output(), &data.x).0
    } else {
        0.0
    };
    Ok(Evaluation {
        l1,
        l2_deficit: deficit,
        l2_norms: a.entrywise_l1() + b.entrywise_l1(),
        recon,
    })
}

/// Mean squared reconstruction error and its gradient w.r.t. the decoder
/// output (sample-major).
fn reconstruction_error(decoded: &Matrix, x: &Matrix) -> (f64, Matrix) {
    let k = decoded.rows();
    let mut grad = Matrix::zeros(k, STATE_DIM);
    let mut loss = 0.0;
    for s in 0..k {
        for i in 0..STATE_DIM {
            let d = decoded[(s, i)] - x[(i, s)];
            loss += d * d;
            grad[(s, i)] = 2.0 * d / k as f64;
        }
    }
    (loss / k as f64, grad)
}

fn gradients(
    encoder: &MlpNetwork,
    decoder: &MlpNetwork,
    data: &DkrcDataset,
    goal: &Observation,
    config: &DkrcTrainConfig,
) -> Result<(crate::nnet::GradientSet, crate::nnet::GradientSet)> {
    let lifted = lift_batch(encoder, data, goal, config.state_passthrough)?;
    let k = lifted.z.rows();
    let n = lifted.z.cols();
    let (_, k_op) = loss_l1(&lifted.z_next.transpose(), &lifted.z.transpose())?;

    // L1 upstream with K fixed: r = z' − K z, ∂‖r‖/∂z' = r/‖r‖, ∂‖r‖/∂z = −Kᵀ r/‖r‖.
    let mut up_next = Matrix::zeros(k, n);
    let mut up_cur = Matrix::zeros(k, n);
    for s in 0..k {
        let kz = k_op.mat_vec(lifted.z.row(s));
        let r: Vec<f64> = lifted.z_next.row(s).iter().zip(&kz).map(|(a, b)| a - b).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let scale = 1.0 / (norm * k as f64);
        let ktr = k_op.tr_mat_vec(&r);
        for j in 0..n {
            up_next[(s, j)] = r[j] * scale;
            up_cur[(s, j)] = -ktr[j] * scale;
        }
    }

    let mut grad_dec = crate::nnet::GradientSet::zeros_like(decoder);
    if config.recon_weight > 0.0 {
        let dec_cache = decoder.forward_batch(&lifted.z)?;
        let (_, mut dloss) = reconstruction_error(dec_cache.output(), &data.x);
        dloss.as_mut_slice().iter_mut().for_each(|v| *v *= config.recon_weight);
        let (gd, dz) = decoder.backward_batch(&dec_cache, &dloss)?;
        grad_dec = gd;
        up_cur = &up_cur + &dz;
    }

    // Pass-through coordinates carry no parameters.
    let off = n - lifted.goal_code.len();
    let m = n - off;
    let up_cur = up_cur.block(0, off, k, m);
    let up_next = up_next.block(0, off, k, m);
    let (mut grad_enc, _) = encoder.backward_batch(&lifted.enc_x, &up_cur)?;
    let (g_next, _) = encoder.backward_batch(&lifted.enc_next, &up_next)?;
    grad_enc.add_assign(&g_next);

    // z = ψ(x) − ψ(x*): the goal code receives minus the summed upstream.
    let mut up_goal = vec![0.0; m];
    for s in 0..k {
        for j in 0..m {
            up_goal[j] -= up_cur[(s, j)] + up_next[(s, j)];
        }
    }
    let (g_goal, _) = encoder.backward(goal, &up_goal)?;
    grad_enc.add_assign(&g_goal);

    if !grad_enc.is_finite() || !grad_dec.is_finite() {
        return Err(Error::Diverged("non-finite encoder/decoder gradients".into()));
    }
    Ok((grad_enc, grad_dec))
}
