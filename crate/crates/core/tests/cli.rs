//! End-to-end checks of the `mcsprob` binary on a small configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcsprob::cli::RunConfig;

const SMALL: &str = r#"
seed = 5

[channel]
duration_s = 30.0

[data]
n_traces = 1

[data.split]
anchor_stride = 256

[train]
epochs = 2
batch_size = 32

[eval]
bench_iters = 50
"#;

fn mcsprob(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsprob"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

#[test]
fn pipeline_stages_and_dependency_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL).unwrap();
    let out = dir.path().join("out");

    let o = mcsprob(&config, &out, &["evaluate"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let o = mcsprob(&config, &out, &["generate"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("empirical BLER"));
    let first = fs::read(out.join("traces/trace_000.csv")).unwrap();
    assert_eq!(mcsprob(&config, &out, &["generate"]).status.code(), Some(0));
    assert_eq!(fs::read(out.join("traces/trace_000.csv")).unwrap(), first);

    let o = mcsprob(&config, &out, &["preprocess"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let train_bin = fs::read(out.join("data/train.bin")).unwrap();
    assert_eq!(
        mcsprob(&config, &out, &["preprocess"]).status.code(),
        Some(0)
    );
    assert_eq!(fs::read(out.join("data/train.bin")).unwrap(), train_bin);

    let o = mcsprob(&config, &out, &["evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("mcsprob train"), "{}", text(&o));

    let o = mcsprob(&config, &out, &["train"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let o = mcsprob(&config, &out, &["evaluate"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let o = mcsprob(&config, &out, &["bench"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("% of TTI"));

    let o = mcsprob(&config, &out, &["report"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let metrics = fs::read_to_string(out.join("report/metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 5);
    for name in ["PROPOSED", "LRA", "MAW", "DETERMINISTIC", "MSE_T"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{name},"))));
    }
    for f in ["summary.txt", "loss_curve.svg", "metrics.svg"] {
        assert!(out.join("report").join(f).exists(), "{f}");
    }

    let cfg = RunConfig::load(&config).unwrap();
    let header = fs::read_to_string(out.join("eval/report.csv")).unwrap();
    assert!(header.starts_with(&format!("# config_fingerprint={:016x}", cfg.fingerprint())));
}

#[test]
fn usage_and_path_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL).unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = mcsprob(&config, &blocker.join("sub"), &["generate"]);
    assert_ne!(o.status.code(), Some(0));

    let o = mcsprob(&config, dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = mcsprob(&dir.path().join("missing.toml"), dir.path(), &["generate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_subcommand_round_trips() {
    let o = Command::new(env!("CARGO_BIN_EXE_mcsprob"))
        .args(["--seed", "42", "config"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let cfg = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 42);
}
