use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nnstop::evaluation::BoundsEstimate;
use nnstop::market::PathBatch;

const SMALL: &str = r#"
[model]
kind = "gbm"
s0 = [36.0]
r = 0.06
delta = [0.0]
sigma = [0.2]

[grid]
maturity = 1.0
n_exercise = 5

[payoff]
kind = "put"
strike = 40.0

[method]
kind = "one"
variations = [1, 4, 5]
train_paths = 2000

[method.net]
phi_hidden = [8, 8]
psi_hidden = [8, 8]

[method.train]
learning_rate = 0.003
batch_size = 256
max_epochs = 5
patience = 2

[evaluation]
n_eval = 4000
n_repeats = REPEATS
hedging = true

[seeds]
master = 9

[output]
dir = "unused"
"#;

fn nnstop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnstop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_small(tmp: &Path, out: &str, repeats: usize) -> PathBuf {
    let cfg = write_config(tmp, &format!("{out}.toml"), &SMALL.replace("REPEATS", &repeats.to_string()));
    let out_dir = tmp.join(out);
    let o = nnstop(&[
        "--threads",
        "2",
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out_dir
}

#[test]
fn bundled_configs_validate() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let o = nnstop(&["run", "--config", p.to_str().unwrap(), "--dry-run"]);
        assert!(o.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
        let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(plan["seeds"]["master"].is_u64());
        n += 1;
    }
    assert!(n >= 4);
}

#[test]
fn dry_run_does_not_write() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("REPEATS", "1"));
    let out = tmp.path().join("out");
    let o = nnstop(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "77",
        "--dry-run",
    ]);
    assert!(o.status.success());
    let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan["seeds"]["master"], 77);
    assert_eq!(plan["training"]["method"], "one");
    assert!(!out.exists());
}

#[test]
fn illegal_variation_names_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("REPEATS", "1").replace("kind = \"one\"", "kind = \"two\"");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let o = nnstop(&["run", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("method.variations") && err.contains("variation 1"), "{err}");
}

#[test]
fn run_report_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_small(tmp.path(), "a", 1);
    let b = run_small(tmp.path(), "b", 1);
    for f in ["summary.csv", "bounds.json", "diagnostics.csv", "hedge.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    for f in ["policy/manifest.json", "policy/date_000.nets", "hedge_histogram.csv", "summary.md", "run.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }

    let bounds: BoundsEstimate = serde_json::from_str(&fs::read_to_string(a.join("bounds.json")).unwrap()).unwrap();
    let o = nnstop(&["report", a.to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = table.lines().nth(2).unwrap().split('|').map(str::trim).collect();
    assert_eq!(row[4].parse::<f64>().unwrap(), bounds.lower_mean);
    assert_eq!(row[6].parse::<f64>().unwrap(), bounds.upper_mean);
    assert_eq!(row[8].parse::<f64>().unwrap(), bounds.gap_mean);
    assert_eq!(row[5], "NA");
    assert_eq!(row[2], "1015");
    let o2 = nnstop(&["report", a.to_str().unwrap()]);
    assert_eq!(table.as_bytes(), &o2.stdout[..]);

    let csv = fs::read_to_string(a.join("summary.csv")).unwrap();
    let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[0], "I (V1+4+5)");
    assert_eq!(fields[2].parse::<f64>().unwrap(), bounds.lower_mean);
    assert_eq!(fields[3], "NA");
}

#[test]
fn repeats_populate_sd_column() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_small(tmp.path(), "r", 3);
    let csv = fs::read_to_string(dir.join("summary.csv")).unwrap();
    let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert!(fields[3].parse::<f64>().unwrap() > 0.0);
    assert!(fields[6].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn report_on_missing_artifacts_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nnstop(&["report", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn oracle_prices_bundled_put() {
    let cfg = configs_dir().join("bs1d_put_method1.toml");
    let o = nnstop(&["oracle", "--config", cfg.to_str().unwrap(), "--tree-steps", "10000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let euro = v[0]["price"].as_f64().unwrap();
    let berm = v[1]["price"].as_f64().unwrap();
    assert!((euro - 3.84430779159684).abs() < 1e-10);
    assert!((berm - 4.477869970831249).abs() < 1e-9);
}

#[test]
fn simulate_writes_readable_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("REPEATS", "1"));
    let out = tmp.path().join("paths.bin");
    let o = nnstop(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "100",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let batch = PathBatch::read_from(&out).unwrap();
    assert_eq!(batch.n_paths, 100);
    assert_eq!(batch.n_steps, 5);
}
