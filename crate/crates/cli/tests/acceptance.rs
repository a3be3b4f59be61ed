//! Acceptance criteria reachable through the `daf` binary, one PASS/FAIL
//! line each. Exits non-zero on any failure.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use serde_json::json;

const TOLERANCE: f64 = 1e-3;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn daf(args: &[&str]) -> std::io::Result<Output> {
    Command::new(env!("CARGO_BIN_EXE_daf")).args(args).env_remove("DAF_SEED").output()
}

fn stderr_tail(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    text.lines().last().unwrap_or("").to_string()
}

fn gradient_suite() -> Outcome {
    let out = match daf(&["gradcheck", "--trials", "20", "--seed", "2024"]) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("cannot run daf: {e}")),
    };
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut worst = 0.0f64;
    let mut rows = 0;
    let mut bad = Vec::new();
    for line in stdout.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (Some(trials), Some(err)) = (cols.get(1), cols.get(2)) else {
            bad.push(line.to_string());
            continue;
        };
        let trials: usize = trials.parse().unwrap_or(0);
        let err: f64 = err.parse().unwrap_or(f64::INFINITY);
        rows += 1;
        worst = worst.max(err);
        if trials < 20 || !(err < TOLERANCE) {
            bad.push(cols[0].to_string());
        }
    }
    let ok = out.status.success() && rows > 0 && bad.is_empty();
    let mut detail = format!("{rows} ops, worst {worst:.2e} (limit {TOLERANCE:e})");
    if !bad.is_empty() {
        detail.push_str(&format!(", failing: {}", bad.join(" ")));
    }
    if !out.status.success() {
        detail.push_str(&format!(", exit {}: {}", out.status, stderr_tail(&out)));
    }
    outcome(ok, detail)
}

fn write_config(path: &Path, config: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

fn overfit_sanity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    write_config(
        &cfg,
        json!({
            "variant": "baseline", "epochs": 200, "batch_size": 4, "lr_decay_every": 1000,
            "n_train": 8, "n_test": 8, "data": { "n_class": 2 }
        }),
    );
    let run = dir.path().join("run");
    let (cfg, run) = (cfg.to_str().unwrap(), run.to_str().unwrap());
    let train = daf(&["train", "--config", cfg, "--out", run]).unwrap();
    if !train.status.success() {
        return outcome(false, format!("train failed: {}", stderr_tail(&train)));
    }
    let ckpt = format!("{run}/model.daft");
    let eval = daf(&["eval", "--config", cfg, "--checkpoint", &ckpt, "--split", "train"]).unwrap();
    let table = String::from_utf8_lossy(&eval.stdout).to_string();
    let acc: Option<f64> = table.lines().nth(1).and_then(|l| l.split(',').nth(1)).and_then(|v| v.parse().ok());
    match acc {
        Some(a) => outcome(a == 1.0, format!("train accuracy {:.1}% after 200 epochs", 100.0 * a)),
        None => outcome(false, format!("unreadable eval output {table:?}: {}", stderr_tail(&eval))),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    write_config(&cfg, json!({ "variant": "full", "epochs": 2, "n_train": 16, "n_test": 16 }));
    let cfg = cfg.to_str().unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let res = daf(&["train", "--config", cfg, "--out", out.to_str().unwrap()]).unwrap();
        if !res.status.success() {
            return outcome(false, format!("train failed: {}", stderr_tail(&res)));
        }
        runs.push(out);
    }
    let files = ["metrics.csv", "losses.csv", "model.daft", "model.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(runs[0].join(f)).ok() != fs::read(runs[1].join(f)).ok())
        .collect();
    if differing.is_empty() {
        outcome(true, format!("two `train` runs byte-identical in {}", files.join(", ")))
    } else {
        outcome(false, format!("differing outputs: {}", differing.join(", ")))
    }
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Duration); 3] = [
        ("gradient_suite", gradient_suite, Duration::from_secs(120)),
        ("overfit_sanity", overfit_sanity, Duration::from_secs(120)),
        ("determinism", determinism, Duration::from_secs(30 * 60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let ok = result.ok && elapsed <= budget;
        failures += !ok as usize;
        println!(
            "{} cli_{name}: {} ({:.1}s, budget {}s)",
            if ok { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
