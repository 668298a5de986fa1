use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dkrc-cli")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn csv_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count()
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    assert_eq!(code(&cli(&["--help"])), 0);
    assert_eq!(code(&cli(&["bogus"])), 1);
    assert_eq!(code(&cli(&["suite", "--noise", "0.6"])), 1);
    assert_eq!(code(&cli(&["suite", "--init", "sideways"])), 1);
    assert_eq!(code(&cli(&["suite", "--method", "pid"])), 1);
}

#[test]
fn analytical_suite_and_robustness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("suite");
    let o = cli(&["suite", "--method", "analytical", "--games", "3", "--steps", "20", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_count(&out), 3);
    assert!(out.join("summary.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("method analytical"));

    let rob = dir.path().join("rob");
    let o = cli(&["robustness", "--method", "analytical", "--steps", "20", "--out", rob.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(csv_count(&rob), 5);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(rob.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["games"], 5);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(&cfg, r#"{"method":"analytical","games":4,"steps":10,"inits":["random"],"seed":5}"#).unwrap();
    let out = dir.path().join("o");
    let o = cli(&["suite", "--config", cfg.to_str().unwrap(), "--games", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(csv_count(&out), 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);

    fs::write(&cfg, r#"{"games":0}"#).unwrap();
    assert_eq!(code(&cli(&["suite", "--config", cfg.to_str().unwrap()])), 1);
    fs::write(&cfg, "not json").unwrap();
    assert_eq!(code(&cli(&["suite", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn missing_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["suite", "--method", "dkrc_mpc", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint"));
    assert_eq!(code(&cli(&["compare-models", "--out", dir.path().to_str().unwrap()])), 1);
}

#[test]
fn dkrc_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = cli(&["collect", "--episodes", "10", "--steps", "200", "--seed", "3", "--out", d]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("2000 samples"));
    assert_eq!(code(&cli(&["collect", "--episodes", "1", "--steps", "100", "--out", d])), 1);

    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"hidden":8}"#).unwrap();
    let data = dir.path().join("dataset.json");
    let o = cli(&["train-dkrc", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--epochs", "2", "--out", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let model = dir.path().join("dkrc_model.json");
    assert!(model.exists() && dir.path().join("dkrc_report.json").exists());

    let o = cli(&["compare-models", "--model", model.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("similarity.json").exists());

    for method in ["dkrc_mpc", "dkrc_lqr"] {
        let out = dir.path().join(method);
        let o = cli(&["run", "--method", method, "--model", model.to_str().unwrap(), "--init", "up-left", "--steps", "15", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(csv_count(&out), 1);
    }
}

#[test]
fn ddpg_training_and_divergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = dir.path().join("ddpg.json");
    fs::write(&cfg, r#"{"hidden":8,"batch_size":16}"#).unwrap();
    let o = cli(&["train-ddpg", "--episodes", "2", "--config", cfg.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agent = dir.path().join("ddpg_agent.json");
    assert!(agent.exists());
    let returns = fs::read_to_string(dir.path().join("ddpg_returns.csv")).unwrap();
    assert_eq!(returns.lines().count(), 3);

    let out = dir.path().join("games");
    let o = cli(&["suite", "--method", "ddpg", "--model", agent.to_str().unwrap(), "--games", "2", "--steps", "10", "--noise", "0.6,1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(csv_count(&out), 2);

    fs::write(&cfg, r#"{"hidden":8,"batch_size":16,"critic_lr":1e300,"actor_lr":1e300}"#).unwrap();
    let o = cli(&["train-ddpg", "--episodes", "3", "--config", cfg.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
