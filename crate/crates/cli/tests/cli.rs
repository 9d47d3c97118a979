//! End-to-end runs of the `matrix-trader` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matrix_trader::algo::read_history_csv;
use matrix_trader::data::MarketDataset;

const TINY: &str = "\
seed = 3

[data]
synthetic_days = 150
synthetic_tickers = 2
test_fraction = 0.2

[env]
window = 20
turbulence_lookback = 40

[policy]
cnn_conv1_filters = 4
cnn_conv2_filters = 8
cnn_dense = 16
mlp_hidden = 16

[algo]
total_steps = 32

[ppo]
horizon = 32
minibatch = 16
epochs = 1

[a2c]
horizon = 8

[compare]
horizon = 16
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_matrix-trader"));
    c.env_remove("MATRIX_TRADER_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.ini");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn misspelled_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}gama = 0.9\n"));
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("gama"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn train_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run_dir = dir.path().join("run");
    let out = run(&[
        "--quiet",
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&run_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in [
        "checkpoint.tar",
        "history.csv",
        "equity.csv",
        "trades.csv",
        "config.resolved.ini",
    ] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let history = read_history_csv(&run_dir.join("history.csv")).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].env_steps, 32);
    let resolved = std::fs::read_to_string(run_dir.join("config.resolved.ini")).unwrap();
    assert!(resolved.contains("horizon = 32"), "{resolved}");
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let mut checkpoints = Vec::new();
    for (name, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let run_dir = dir.path().join(name);
        let out = run(&[
            "--quiet",
            "train",
            "--config",
            s(&cfg),
            "--seed",
            seed,
            "--out",
            s(&run_dir),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        checkpoints.push(std::fs::read(run_dir.join("checkpoint.tar")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    assert_ne!(checkpoints[0], checkpoints[2]);
}

#[test]
fn synth_raw_files_ingest_back_to_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (synth, raw, ingested) = (
        dir.path().join("synth"),
        dir.path().join("raw"),
        dir.path().join("ingested"),
    );
    let out = run(&[
        "--quiet",
        "synth",
        "--out",
        s(&synth),
        "--days",
        "120",
        "--tickers",
        "3",
        "--regime",
        "uptrend",
        "--raw",
        s(&raw),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "--quiet",
        "ingest",
        "--prices",
        s(&raw.join("prices.csv")),
        "--fundamentals",
        s(&raw.join("fundamentals.csv")),
        "--out",
        s(&ingested),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = MarketDataset::load(&synth).unwrap();
    let b = MarketDataset::load(&ingested).unwrap();
    assert_eq!(a.tickers(), b.tickers());
    assert_eq!(a.calendar(), b.calendar());
    for t in 0..a.n_days() {
        assert_eq!(a.prices_on(t), b.prices_on(t));
    }
}

#[test]
fn missing_fundamentals_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let out = run(&[
        "--quiet",
        "synth",
        "--out",
        s(&dir.path().join("ds")),
        "--days",
        "100",
        "--raw",
        s(&raw),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let missing = dir.path().join("nowhere.csv");
    let out = run(&[
        "ingest",
        "--prices",
        s(&raw.join("prices.csv")),
        "--fundamentals",
        s(&missing),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
}

#[test]
fn evaluate_writes_report_and_rejects_other_universes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run_dir = dir.path().join("run");
    let out = run(&[
        "--quiet",
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&run_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ck = run_dir.join("checkpoint.tar");

    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "--quiet",
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--config",
        s(&cfg),
        "--out",
        s(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "final_value",
        "total_reward",
        "sharpe_daily",
        "sharpe_annual",
        "total_cost",
        "n_trades",
        "max_drawdown",
    ] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    for f in [
        "report.json",
        "equity.csv",
        "trades.csv",
        "mean_actions.csv",
    ] {
        assert!(eval_dir.join(f).is_file(), "missing {f}");
    }

    let other = dir.path().join("other");
    let out = run(&[
        "--quiet",
        "synth",
        "--out",
        s(&other),
        "--days",
        "150",
        "--tickers",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--dataset",
        s(&other),
        "--out",
        s(&dir.path().join("e2")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("tickers"), "{}", stderr(&out));
}

#[test]
fn compare_runs_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("cmp");
    let out = run(&[
        "--quiet",
        "compare",
        "--config",
        s(&cfg),
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut reader = csv::Reader::from_path(out_dir.join("comparison.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 2 + 4 * 4);
    assert_eq!(&header[2], "cnn_ppo_episode_reward");
    let rows: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][1], "32");
    for cell in ["cnn_ppo", "cnn_a2c", "mlp_ppo", "mlp_a2c"] {
        assert!(
            out_dir.join(cell).join("history.csv").is_file(),
            "missing {cell}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["complete"], true);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ini") {
            matrix_trader_cli::config::ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3, "found {n} configs");
}
