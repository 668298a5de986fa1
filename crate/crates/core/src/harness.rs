//! Experiment orchestration: multi-game suites, CSV/JSON artifacts and the
//! DKRC-vs-analytical model comparison.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{paper_zoh_model, AnalyticalModel};
use crate::control::{self, Controller, ControllerKind, EpisodeOptions, LinearPlant, MpcConfig};
use crate::ddpg::{self, DdpgAgent};
use crate::dkrc::LiftedLinearModel;
use crate::env::{self, EnvParams, InitKind, ObservationNoise, PendulumState};
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;
use crate::rng;
use crate::trajectory::{TrajectoryRecord, SUCCESS_WINDOW};

/// Exact trajectory CSV header.
pub const CSV_HEADER: &str = "t,theta,theta_dot,u,cost,energy,planned_theta,planned_theta_dot,plan_deviation";
pub const SUMMARY_FILE: &str = "summary.json";

/// Pearson correlation over the flattened entries of two equally shaped
/// matrices. Not clamped: the result lies in `[−1, 1]`.
pub fn pcc(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(invalid(format!("pcc needs equal shapes, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let n = a.as_slice().len() as f64;
    let ma = a.as_slice().iter().sum::<f64>() / n;
    let mb = b.as_slice().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("a matrix has zero variance".into()));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub analytical_a: Matrix,
    /// Top-left 3×3 block of the lifted `A`.
    pub lifted_a_block: Matrix,
    pub lifted_b: Matrix,
    pub score: f64,
}

/// Correlates the top-left 3×3 block of a lifted model's `A` with the
/// analytical `A_d`.
pub fn compare_models<P: LinearPlant + ?Sized>(lifted: &P, analytical: &AnalyticalModel) -> Result<SimilarityReport> {
    let (r, c) = analytical.a.shape();
    let a = lifted.a();
    if a.rows() < r || a.cols() < c {
        return Err(invalid(format!("lifted A is {:?}, smaller than the analytical model", a.shape())));
    }
    let block = a.block(0, 0, r, c);
    let score = pcc(&analytical.a, &block)?;
    Ok(SimilarityReport {
        analytical_a: analytical.a.clone(),
        lifted_a_block: block,
        lifted_b: lifted.b().clone(),
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DkrcMpc,
    DkrcLqr,
    Ddpg,
    Analytical,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::DkrcMpc, Method::DkrcLqr, Method::Ddpg, Method::Analytical];

    pub fn tag(self) -> &'static str {
        match self {
            Method::DkrcMpc => "dkrc_mpc",
            Method::DkrcLqr => "dkrc_lqr",
            Method::Ddpg => "ddpg",
            Method::Analytical => "analytical",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn needs_checkpoint(self) -> bool {
        self != Method::Analytical
    }
}

/// Experiment description; every field has a default so config files may
/// be partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Game `g` starts from `inits[g % inits.len()]`.
    pub inits: Vec<InitKind>,
    pub games: usize,
    pub steps: usize,
    /// Initial angular velocity for the fixed starting angles.
    pub theta_dot0: f64,
    /// Multiplicative observation-noise ratio range.
    pub noise: Option<[f64; 2]>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Trained DKRC model or DDPG checkpoint.
    pub model: Option<PathBuf>,
    pub mpc: MpcConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::DkrcMpc,
            inits: InitKind::FIXED.to_vec(),
            games: InitKind::FIXED.len(),
            steps: env::EPISODE_STEPS,
            theta_dot0: 1.0,
            noise: None,
            seed: 0,
            out_dir: PathBuf::from("results"),
            model: None,
            mpc: MpcConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.games == 0 || self.steps == 0 {
            return Err(invalid("games and steps must be at least 1"));
        }
        if self.inits.is_empty() {
            return Err(invalid("at least one initial condition is required"));
        }
        if !self.theta_dot0.is_finite() || self.theta_dot0.abs() > env::MAX_SPEED {
            return Err(invalid(format!("theta_dot0 {} outside [-8, 8]", self.theta_dot0)));
        }
        self.noise_model()?;
        self.mpc.validate()
    }

    pub fn noise_model(&self) -> Result<Option<ObservationNoise>> {
        self.noise.map(|[lo, hi]| ObservationNoise::new(lo, hi)).transpose()
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Closed-loop policy for one method.
pub enum Policy {
    Lifted { model: Box<LiftedLinearModel>, kind: ControllerKind },
    Analytical(AnalyticalModel),
    Ddpg(Box<DdpgAgent>),
}

impl Policy {
    /// Loads the checkpoint the method needs.
    pub fn load(method: Method, checkpoint: Option<&Path>) -> Result<Self> {
        if method == Method::Analytical {
            return Ok(Policy::Analytical(paper_zoh_model()));
        }
        let path = checkpoint.ok_or_else(|| Error::MissingCheckpoint(format!("method {} needs a model file", method.tag())))?;
        Ok(match method {
            Method::DkrcMpc | Method::DkrcLqr => Policy::Lifted {
                model: Box::new(LiftedLinearModel::load_json(path)?),
                kind: if method == Method::DkrcMpc { ControllerKind::Mpc } else { ControllerKind::Lqr },
            },
            Method::Ddpg => {
                if !path.exists() {
                    return Err(Error::MissingCheckpoint(path.display().to_string()));
                }
                Policy::Ddpg(Box::new(DdpgAgent::load_json(path)?))
            }
            Method::Analytical => unreachable!(),
        })
    }

    /// Plays one game, appending rows to `record`.
    pub fn play(
        &self,
        init: PendulumState,
        steps: usize,
        noise: Option<(ObservationNoise, u64)>,
        mpc: &MpcConfig,
        record: &mut TrajectoryRecord,
    ) -> Result<()> {
        let params = EnvParams::default();
        let mut opts = EpisodeOptions::new(steps);
        if let Some((n, seed)) = noise {
            opts.noise = Some(n);
            opts.noise_seed = seed;
        }
        match self {
            Policy::Lifted { model, kind } => {
                let mut c = Controller::build(model.as_ref(), *kind, mpc)?;
                control::run_episode(model.as_ref(), &mut c, init, &opts, record)
            }
            Policy::Analytical(model) => {
                let mut c = Controller::build(model, ControllerKind::Mpc, mpc)?;
                control::run_episode(model, &mut c, init, &opts, record)
            }
            Policy::Ddpg(agent) => {
                let noise = noise.as_ref().map(|(n, s)| (n, *s));
                ddpg::run_episode(agent, init, steps, noise, &params, record)
            }
        }
    }
}

/// Per-game seeds for the random initial state and the observation noise.
pub fn game_seeds(seed: u64, game: usize) -> (u64, u64) {
    let mut r = rng::derived(seed, game as u64);
    (r.random(), r.random())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSummary {
    pub index: usize,
    pub init: String,
    pub theta0: f64,
    pub theta_dot0: f64,
    pub csv: String,
    pub rows: usize,
    pub success: bool,
    pub settling_time: Option<usize>,
    pub terminal_cost: f64,
    pub mean_energy: f64,
    /// Set when the game aborted early; it then counts as a failure.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub method: Method,
    pub seed: u64,
    pub games: usize,
    pub success_count: usize,
    /// Mean over games that settled.
    pub settling_time_mean: Option<f64>,
    pub terminal_cost_mean: f64,
    pub energy_mean: f64,
    pub per_game: Vec<GameSummary>,
}

/// One finished game.
pub struct GameResult {
    pub summary: GameSummary,
    pub record: TrajectoryRecord,
}

/// Plays every game of `config` in memory. A game that errors is kept with
/// its partial trajectory and marked failed.
pub fn play_games(policy: &Policy, config: &ExperimentConfig) -> Result<Vec<GameResult>> {
    config.validate()?;
    let noise = config.noise_model()?;
    let mut out = Vec::with_capacity(config.games);
    for g in 0..config.games {
        let kind = config.inits[g % config.inits.len()];
        let (init_seed, noise_seed) = game_seeds(config.seed, g);
        let init = env::reset(kind, config.theta_dot0, init_seed)?;
        let mut record = TrajectoryRecord::new(config.method.tag(), kind.tag(), config.seed);
        let outcome = policy.play(init, config.steps, noise.map(|n| (n, noise_seed)), &config.mpc, &mut record);
        let error = outcome.err().map(|e| e.to_string());
        let summary = GameSummary {
            index: g,
            init: kind.tag().to_string(),
            theta0: init.theta,
            theta_dot0: init.theta_dot,
            csv: format!("game_{g:03}_{}.csv", kind.tag()),
            rows: record.len(),
            success: error.is_none() && record.len() == config.steps && record.succeeded(),
            settling_time: record.settling_time(),
            terminal_cost: record.terminal_cost(SUCCESS_WINDOW),
            mean_energy: record.mean_energy(),
            error,
        };
        out.push(GameResult { summary, record });
    }
    Ok(out)
}

pub fn summarize(config: &ExperimentConfig, games: &[GameResult]) -> SuiteSummary {
    let per_game: Vec<GameSummary> = games.iter().map(|g| g.summary.clone()).collect();
    let n = per_game.len() as f64;
    let settled: Vec<f64> = per_game.iter().filter_map(|g| g.settling_time.map(|t| t as f64)).collect();
    SuiteSummary {
        method: config.method,
        seed: config.seed,
        games: per_game.len(),
        success_count: per_game.iter().filter(|g| g.success).count(),
        settling_time_mean: (!settled.is_empty()).then(|| settled.iter().sum::<f64>() / settled.len() as f64),
        terminal_cost_mean: per_game.iter().map(|g| g.terminal_cost).sum::<f64>() / n,
        energy_mean: per_game.iter().map(|g| g.mean_energy).sum::<f64>() / n,
        per_game,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    t: usize,
    theta: f64,
    theta_dot: f64,
    u: f64,
    cost: f64,
    energy: f64,
    planned_theta: Option<f64>,
    planned_theta_dot: Option<f64>,
    plan_deviation: Option<f64>,
}

/// Writes a trajectory with exported angles in `[0, 2π)`; the planned
/// columns are empty where no plan exists.
pub fn write_trajectory_csv(record: &TrajectoryRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if record.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in &record.rows {
        w.serialize(CsvRow {
            t: r.t,
            theta: r.export_theta(),
            theta_dot: r.theta_dot,
            u: r.u,
            cost: r.cost,
            energy: r.energy,
            planned_theta: r.planned_theta(),
            planned_theta_dot: r.planned_theta_dot(),
            plan_deviation: r.plan_deviation(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Per-row `(cost, energy)` read back from a trajectory CSV.
pub fn read_cost_energy(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::CrossCheck(format!("unexpected header {}", header.join(","))));
    }
    r.deserialize::<CsvRow>()
        .map(|row| row.map(|row| (row.cost, row.energy)).map_err(Error::from))
        .collect()
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Recomputes the per-game aggregates from the written CSVs.
fn cross_check(dir: &Path, summary: &SuiteSummary) -> Result<()> {
    for g in &summary.per_game {
        let rows = read_cost_energy(dir.join(&g.csv))?;
        if rows.len() != g.rows {
            return Err(Error::CrossCheck(format!("{}: {} rows written, {} summarised", g.csv, rows.len(), g.rows)));
        }
        let tail = &rows[rows.len().saturating_sub(SUCCESS_WINDOW)..];
        let terminal = if tail.is_empty() { f64::NAN } else { tail.iter().map(|r| r.0).sum::<f64>() / tail.len() as f64 };
        let energy = if rows.is_empty() { f64::NAN } else { rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64 };
        if !same(terminal, g.terminal_cost) || !same(energy, g.mean_energy) {
            return Err(Error::CrossCheck(format!("{}: aggregates differ from the summary", g.csv)));
        }
    }
    Ok(())
}

/// Runs a suite with an already loaded policy and writes one CSV per game
/// plus [`SUMMARY_FILE`] into `config.out_dir`.
pub fn run_suite_with(policy: &Policy, config: &ExperimentConfig) -> Result<SuiteSummary> {
    let games = play_games(policy, config)?;
    fs::create_dir_all(&config.out_dir)?;
    for g in &games {
        write_trajectory_csv(&g.record, config.out_dir.join(&g.summary.csv))?;
    }
    let summary = summarize(config, &games);
    cross_check(&config.out_dir, &summary)?;
    fs::write(config.out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Loads the configured checkpoint and runs the suite.
pub fn run_suite(config: &ExperimentConfig) -> Result<SuiteSummary> {
    config.validate()?;
    let policy = Policy::load(config.method, config.model.as_deref())?;
    run_suite_with(&policy, config)
}

/// The five-game noise-robustness experiment for `config.method`.
pub fn robustness_config(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        inits: InitKind::FIXED.to_vec(),
        games: InitKind::FIXED.len(),
        noise: Some(base.noise.unwrap_or([0.6, 1.0])),
        ..base.clone()
    }
}
