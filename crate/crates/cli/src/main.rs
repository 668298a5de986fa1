//! Command line front end: data collection, training, experiment suites and
//! model comparison. Exit status: 0 on success, 1 on configuration or I/O
//! errors, 2 when training diverges.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dkrc::baseline::paper_zoh_model;
use dkrc::ddpg::{self, DdpgConfig};
use dkrc::dkrc::{self as koopman, DkrcDataset, DkrcTrainConfig, LiftedLinearModel};
use dkrc::env::{InitKind, EPISODE_STEPS};
use dkrc::harness::{self, ExperimentConfig, Method, SuiteSummary};
use dkrc::{Error, Result};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "dkrc-cli", version, about = "Deep Koopman control experiments on the swing-up pendulum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained DKRC model or DDPG checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// lowest | left | right | up-left | up-right | random
    #[arg(long, value_parser = parse_init)]
    init: Option<InitKind>,
    #[arg(long)]
    games: Option<usize>,
    /// Steps per game (per episode for `collect`).
    #[arg(long)]
    steps: Option<usize>,
    /// Observation-noise ratio range, e.g. `0.6,1`.
    #[arg(long, value_parser = parse_noise)]
    noise: Option<[f64; 2]>,
}

#[derive(Args, Clone)]
struct Experiment {
    #[command(flatten)]
    common: Common,
    /// dkrc_mpc | dkrc_lqr | ddpg | analytical
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Initial angular velocity for the fixed starting angles.
    #[arg(long, allow_hyphen_values = true)]
    theta_dot0: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-torque transitions for DKRC training.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Train the DKRC encoder and identify the lifted linear model.
    TrainDkrc {
        #[command(flatten)]
        common: Common,
        /// Dataset from `collect`; collected on the fly when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the DDPG baseline.
    TrainDdpg {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3000)]
        episodes: usize,
    },
    /// Play a single game and print its summary.
    Run(Experiment),
    /// Play a multi-game suite, writing one CSV per game and a summary.
    Suite(Experiment),
    /// Correlate a trained DKRC model with the analytical model.
    CompareModels {
        #[command(flatten)]
        common: Common,
    },
    /// Five-game suite under multiplicative observation noise.
    Robustness(Experiment),
}

fn parse_init(s: &str) -> std::result::Result<InitKind, String> {
    InitKind::from_tag(s).ok_or_else(|| format!("unknown init `{s}`"))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_tag(s).ok_or_else(|| format!("unknown method `{s}`"))
}

fn parse_noise(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([p(lo)?, p(hi)?])
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn experiment_config(e: &Experiment) -> Result<ExperimentConfig> {
    let c = &e.common;
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = e.method {
        cfg.method = m;
    }
    if let Some(v) = e.theta_dot0 {
        cfg.theta_dot0 = v;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(m) = &c.model {
        cfg.model = Some(m.clone());
    }
    if let Some(i) = c.init {
        cfg.inits = vec![i];
    }
    if let Some(g) = c.games {
        cfg.games = g;
    }
    if let Some(s) = c.steps {
        cfg.steps = s;
    }
    if c.noise.is_some() {
        cfg.noise = c.noise;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(s: &SuiteSummary) {
    println!(
        "method {} seed {}: {}/{} games succeeded, terminal cost mean {:.4}, energy mean {:.4}, settling time mean {}",
        s.method.tag(),
        s.seed,
        s.success_count,
        s.games,
        s.terminal_cost_mean,
        s.energy_mean,
        s.settling_time_mean.map_or("n/a".to_string(), |t| format!("{t:.1}")),
    );
    for g in &s.per_game {
        println!(
            "  game {:3} {:8} success {:5} terminal cost {:.4} settling {}{}",
            g.index,
            g.init,
            g.success,
            g.terminal_cost,
            g.settling_time.map_or("-".to_string(), |t| t.to_string()),
            g.error.as_ref().map_or(String::new(), |e| format!(" error: {e}")),
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { common, episodes } => {
            let steps = common.steps.unwrap_or(EPISODE_STEPS);
            let data = koopman::collect_dataset(episodes, steps, common.seed.unwrap_or(0))?;
            let path = out_dir(&common)?.join("dataset.json");
            data.save_json(&path)?;
            println!("wrote {} samples to {}", data.len(), path.display());
        }
        Command::TrainDkrc { common, data, epochs } => {
            let mut cfg: DkrcTrainConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let dataset = match data {
                Some(p) => DkrcDataset::load_json(p)?,
                None => koopman::collect_dataset(10, EPISODE_STEPS, cfg.seed)?,
            };
            let (model, report) = koopman::train(&dataset, &cfg)?;
            let dir = out_dir(&common)?;
            model.save_json(dir.join("dkrc_model.json"))?;
            fs::write(dir.join("dkrc_report.json"), serde_json::to_string_pretty(&report)?)?;
            let similarity = harness::compare_models(&model, &paper_zoh_model())?;
            println!(
                "L1 {:.5} -> {:.5}, controllability rank deficit {}, C residual {:.2e}, similarity to analytical A {:.4}",
                report.initial_l1(),
                report.final_l1(),
                model.rank_deficit(),
                report.final_c_residual,
                similarity.score,
            );
            if let Some(w) = &model.controllability_warning {
                eprintln!("warning: {w}");
            }
        }
        Command::TrainDdpg { common, episodes } => {
            let mut cfg: DdpgConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let (agent, curve) = ddpg::train_with_progress(episodes, &cfg, |ep, _| {
                if (ep + 1) % 100 == 0 {
                    eprintln!("episode {}/{episodes}", ep + 1);
                }
            })?;
            let dir = out_dir(&common)?;
            agent.save_json(dir.join("ddpg_agent.json"))?;
            let mut csv = String::from("episode,return\n");
            for (i, r) in curve.returns.iter().enumerate() {
                csv.push_str(&format!("{i},{r}\n"));
            }
            fs::write(dir.join("ddpg_returns.csv"), csv)?;
            let n = curve.returns.len().min(100);
            if n > 0 {
                println!(
                    "mean return: first {n} episodes {:.2}, last {n} episodes {:.2}",
                    curve.window_mean(0, n).unwrap_or(f64::NAN),
                    curve.window_mean(curve.returns.len() - n, n).unwrap_or(f64::NAN),
                );
            }
        }
        Command::Run(e) => {
            let mut cfg = experiment_config(&e)?;
            cfg.games = 1;
            print_summary(&harness::run_suite(&cfg)?);
        }
        Command::Suite(e) => print_summary(&harness::run_suite(&experiment_config(&e)?)?),
        Command::Robustness(e) => {
            let cfg = harness::robustness_config(&experiment_config(&e)?);
            cfg.validate()?;
            print_summary(&harness::run_suite(&cfg)?);
        }
        Command::CompareModels { common } => {
            let path = common
                .model
                .as_ref()
                .ok_or_else(|| Error::MissingCheckpoint("compare-models needs --model".into()))?;
            let model = LiftedLinearModel::load_json(path)?;
            let report = harness::compare_models(&model, &paper_zoh_model())?;
            fs::write(out_dir(&common)?.join("similarity.json"), serde_json::to_string_pretty(&report)?)?;
            println!("similarity r(A_d, A_DKRC top-left 3x3) = {:.4}", report.score);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Diverged(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
