use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use govid::experiment::{synthesize, Scenario};
use govid::plants::{default_table, ModelKind, OperatingPoint};
use govid::signals::{load_csv, write_csv, TimeSeries};

fn govid(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_govid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Small CS budget on the speed controller keeps each run to a few seconds.
const FAST: &str = r#"
model = "ggov1"
subsystems = [3]

[optimizer.cs]
population = 10
max_generations = 15

[identify]
max_rounds = 1
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", "run.toml"];
        all.extend_from_slice(args);
        govid(&all, self.dir.path())
    }

    /// Training record via the binary, validation record via the library.
    fn records(&self) {
        let out = self.run(&["gen-signal", "--snr-db", "40", "--seed", "7", "--out-dir", "train"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let val = synthesize(
            ModelKind::Ggov1,
            &default_table(ModelKind::Ggov1),
            OperatingPoint::default(),
            &Scenario::validation(),
            Some((40.0, 8)),
        )
        .unwrap();
        write_csv(&val, self.path("validation.csv")).unwrap();
    }

    fn identify(&self, out_dir: &str) -> Output {
        self.run(&["identify", "--training", "train/signal.csv", "--out-dir", out_dir])
    }
}

#[test]
fn identify_then_validate_passes() {
    let ws = Workspace::new(FAST);
    ws.records();
    let out = ws.identify("fit");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["fitted.toml", "history.csv", "identify.json"] {
        assert!(ws.path("fit").join(f).exists(), "{f}");
    }
    let out = ws.run(&[
        "validate",
        "--fitted",
        "fit/fitted.toml",
        "--validation",
        "validation.csv",
        "--out-dir",
        "val",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    for f in ["report.json", "autocorr.csv", "indices.csv"] {
        assert!(ws.path("val").join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("val/report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));

    // fitted.toml carries the reference values outside subsystem 3, so the
    // valve passes as written and fails with its actuator lag doubled
    let fitted = std::fs::read_to_string(ws.path("fit/fitted.toml")).unwrap();
    let valve = ["--subsystem", "1", "validate", "--validation", "validation.csv", "--fitted"];
    let out = ws.run(&[&valve[..], &["fit/fitted.toml", "--out-dir", "valve"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let mut table: govid::params::ParamVector = toml::from_str(&fitted).unwrap();
    let t_act = table.value("T_act").unwrap();
    table.set_value("T_act", 2.0 * t_act).unwrap();
    std::fs::write(ws.path("bad.toml"), toml::to_string(&table).unwrap()).unwrap();
    let out = ws.run(&[&valve[..], &["bad.toml", "--out-dir", "bad"]].concat());
    assert_eq!(code(&out), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::new(FAST);
    ws.records();
    assert_eq!(code(&ws.identify("a")), 0);
    assert_eq!(code(&ws.identify("b")), 0);
    for f in ["fitted.toml", "history.csv", "identify.json"] {
        let a = std::fs::read(ws.path("a").join(f)).unwrap();
        let b = std::fs::read(ws.path("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
}

#[test]
fn unreachable_threshold_flags_the_result() {
    let cfg = FAST.replace("max_generations = 15", "max_generations = 15\nstop_threshold = 0.0");
    let ws = Workspace::new(&cfg);
    ws.records();
    let out = ws.identify("fit");
    assert_eq!(code(&out), 5);
    let fitted = std::fs::read_to_string(ws.path("fit/fitted.toml")).unwrap();
    assert!(fitted.contains("# INCOMPLETE"));
}

#[test]
fn compare_writes_twenty_rows() {
    let ws = Workspace::new(FAST);
    ws.records();
    let out = ws.run(&[
        "compare",
        "--training",
        "train/signal.csv",
        "--validation",
        "validation.csv",
        "--seeds",
        "0,1",
        "--out-dir",
        "cmp",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(ws.path("cmp/compare.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "parameter,cs,ga,pso");
    assert_eq!(lines.len(), 21);
    let k_pgov: Vec<&str> = lines.iter().find(|l| l.starts_with("K_pgov,")).unwrap().split(',').collect();
    for v in &k_pgov[1..] {
        let v: f64 = v.parse().unwrap();
        assert!((v - 3.10).abs() < 0.1, "K_pgov median {v}");
    }
    // parameters outside subsystem 3 stay blank
    assert!(lines.contains(&"K_PA,,,"));
    let runs = std::fs::read_to_string(ws.path("cmp/compare_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3 * 2);
}

#[test]
fn simulate_writes_every_tap() {
    let ws = Workspace::new("model = \"st6b\"\n");
    let out = ws.run(&["gen-signal", "--out-dir", "sig"]);
    assert_eq!(code(&out), 0);
    let out = ws.run(&["simulate", "--input", "sig/signal.csv", "--out-dir", "sim"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sim = load_csv(ws.path("sim/simulated.csv")).unwrap();
    for c in ["v_ref", "v_c", "e_fd", "v_r"] {
        assert!(sim.contains(c), "{c}");
    }
}

#[test]
fn zero_amplitude_pulse_gives_flat_channel() {
    let ws = Workspace::new(
        "model = \"ggov1\"\n[signal.scenario.power]\nperiod = 20.0\nduty = 0.5\nlow = 0.75\nhigh = 0.75\n",
    );
    let out = ws.run(&["gen-signal", "--out-dir", "sig"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ts = load_csv(ws.path("sig/signal.csv")).unwrap();
    assert_eq!(ts.len(), 60_001);
    assert!(ts.channel("p_ref").unwrap().iter().all(|&v| v == 0.75));
    assert!(ts.channel("temp_proxy").unwrap().iter().any(|&v| v != ts.channel("temp_proxy").unwrap()[0]));
}

#[test]
fn seeded_noise_is_reproducible() {
    let ws = Workspace::new("model = \"ggov1\"\n");
    for dir in ["a", "b"] {
        assert_eq!(code(&ws.run(&["gen-signal", "--snr-db", "30", "--seed", "3", "--out-dir", dir])), 0);
    }
    assert_eq!(
        std::fs::read(ws.path("a/signal.csv")).unwrap(),
        std::fs::read(ws.path("b/signal.csv")).unwrap()
    );
    assert_eq!(code(&ws.run(&["gen-signal", "--snr-db", "30", "--seed", "4", "--out-dir", "c"])), 0);
    assert_ne!(
        std::fs::read(ws.path("a/signal.csv")).unwrap(),
        std::fs::read(ws.path("c/signal.csv")).unwrap()
    );
}

#[test]
fn missing_files_and_bad_flags() {
    let ws = Workspace::new(FAST);
    let out = ws.run(&["validate", "--fitted", "nope.toml", "--validation", "nope.csv"]);
    assert_eq!(code(&out), 2);
    let out = ws.run(&["identify", "--training", "nope.csv"]);
    assert_eq!(code(&out), 3);
    let out = ws.run(&["identify", "--bogus"]);
    assert_eq!(code(&out), 2);
    let out = ws.run(&["identify", "--subsystem", "9", "--training", "nope.csv"]);
    assert_eq!(code(&out), 2);
    std::fs::write(ws.path("broken.toml"), "model = \"ggov2\"\n").unwrap();
    let out = govid(&["--config", "broken.toml", "gen-signal"], ws.dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn record_missing_a_channel_is_a_data_error() {
    let ws = Workspace::new(FAST);
    let mut ts = TimeSeries::new(0.001).unwrap();
    ts.push("speed_error", vec![0.0; 100]).unwrap();
    write_csv(&ts, ws.path("partial.csv")).unwrap();
    let out = ws.run(&["identify", "--training", "partial.csv", "--out-dir", "fit"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
