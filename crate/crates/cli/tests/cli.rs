use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5
[grid]
width = 4
height = 4
[model]
horizon_epochs = 24
lead_epochs = 1
epoch_minutes = 60.0
battery_range_miles = 20.0
battery_levels = 5
recharge_rate_mph = 40.0
pickup_range_miles = 2.0
[demand]
total = 60
seed = 3
[fleet]
kind = "random"
cars = 3
[train]
iterations = 5
[evaluate]
episodes = 2
[price_sim]
zones = 2
observations_per_zone = 100
episode_length = 50
evaluation_offers = 50
[economics]
fleet_sizes = [2, 3]
tiers = [1, 2]
train_iterations = 3
episodes = 1
"#;

fn evfleet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evfleet")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    (dir, cfg)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn train_then_evaluate() {
    let (dir, cfg) = setup("");
    let cfg = cfg.to_str().unwrap();
    ok(&evfleet(&["train", "--config", cfg, "--out", "a"], dir.path()));
    let a = dir.path().join("a");
    assert_eq!(read(a.join("revenue_series.csv")).lines().count(), 6);
    assert!(a.join("table.bin").exists());
    ok(&evfleet(&["evaluate", "--config", cfg, "--out", "a"], dir.path()));
    let summary: serde_json::Value = serde_json::from_str(&read(a.join("summary.json"))).unwrap();
    for key in ["revenue", "revenue_per_car", "coverage_percent", "activity_percent"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert_eq!(summary["policy"], "vfa");
    assert_eq!(read(a.join("epochs.csv")).lines().count(), 1 + 2 * 24);
}

#[test]
fn identical_runs_write_identical_csvs() {
    let (dir, cfg) = setup("");
    let cfg = cfg.to_str().unwrap();
    for out in ["x", "y"] {
        ok(&evfleet(&["train", "--config", cfg, "--out", out, "--seed", "9"], dir.path()));
        ok(&evfleet(&["evaluate", "--config", cfg, "--out", out, "--seed", "9"], dir.path()));
    }
    for f in ["revenue_series.csv", "epochs.csv", "value_table.csv", "table.bin"] {
        assert_eq!(std::fs::read(dir.path().join("x").join(f)).unwrap(), std::fs::read(dir.path().join("y").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn myopic_needs_no_table() {
    let (dir, cfg) = setup("");
    let out = evfleet(&["evaluate", "--config", cfg.to_str().unwrap(), "--policy", "myopic", "--out", "m"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("myopic"));
}

#[test]
fn vfa_without_table_is_a_config_error() {
    let (dir, cfg) = setup("");
    let out = evfleet(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", "none"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pricing_flag_writes_price_files() {
    let (dir, cfg) = setup("");
    let cfg = cfg.to_str().unwrap();
    ok(&evfleet(&["train", "--config", cfg, "--out", "p", "--pricing", "--no-hier-agg", "--no-monotone"], dir.path()));
    ok(&evfleet(&["evaluate", "--config", cfg, "--out", "p", "--pricing"], dir.path()));
    let hist = read(dir.path().join("p/price_histogram.csv"));
    assert_eq!(hist.lines().count(), 17);
    assert!(dir.path().join("p/pricing.json").exists());
}

#[test]
fn other_subcommands() {
    let (dir, cfg) = setup("[oracle]\ntrips = [[1, 0, 5]]\n");
    let cfg = cfg.to_str().unwrap();
    ok(&evfleet(&["synth", "--config", cfg, "--out", "s"], dir.path()));
    assert_eq!(read(dir.path().join("s/trips.csv")).lines().count(), 61);
    ok(&evfleet(&["price-sim", "--config", cfg, "--out", "s"], dir.path()));
    assert!(dir.path().join("s/price_sim.json").exists());
    ok(&evfleet(&["economics", "--config", cfg, "--out", "s"], dir.path()));
    assert_eq!(read(dir.path().join("s/profit_surface.csv")).lines().count(), 5);
}

#[test]
fn oracle_prints_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("o.toml");
    std::fs::write(
        &cfg,
        "[grid]\nwidth = 2\nheight = 2\n[model]\nhorizon_epochs = 4\nlead_epochs = 0\nbattery_levels = 3\n\
         battery_range_miles = 6.0\npickup_range_miles = 1.5\nspeed_mph = 12.0\n[oracle]\ntrips = [[0, 0, 3]]\n",
    )
    .unwrap();
    let out = evfleet(&["oracle", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("t=0"));
    assert!(text.contains("optimal value"));
    // 4 epochs x 4 zones x 3 levels
    assert_eq!(read(dir.path().join("o/dp_values.csv")).lines().count(), 49);
}

#[test]
fn oracle_refuses_large_instances() {
    let (dir, cfg) = setup("");
    let out = evfleet(&["oracle", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("too large"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    for text in ["[model]\nnot_a_key = 1\n", "seed = \"x\"\n", "[model]\nbattery_levels = 1\n"] {
        std::fs::write(&bad, text).unwrap();
        let out = evfleet(&["synth", "--config", bad.to_str().unwrap(), "--out", "o"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
    let out = evfleet(&["synth", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = evfleet(&["train", "--policy", "greedy"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let (dir, cfg) = setup("");
    let trips = dir.path().join("trips.csv");
    std::fs::write(&trips, "time_s,origin_x,origin_y,dest_x,dest_y\n10,0,0,9,9\n").unwrap();
    let text = read(&cfg).replace("[demand]\n", "[demand]\ntrips = \"trips.csv\"\n");
    std::fs::write(&cfg, text).unwrap();
    let out = evfleet(&["synth", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"));

    std::fs::write(&trips, "").unwrap();
    let out = evfleet(&["synth", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}
