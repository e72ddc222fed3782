use std::path::Path;
use std::process::{Command, Output};

fn vns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vns")).args(args).output().expect("spawn vns")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", stderr(out)))
}

fn small_particle_run(dir: &Path) -> Output {
    vns(&[
        "run",
        "--preset",
        "homog-small-f0",
        "--domain.n",
        "16",
        "--particles.count=2000",
        "--time.t_end",
        "0.05",
        "--output.dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tg");
    let out = vns(&["run", "--preset", "fluid-only", "--time.t_end=0.01", "--output.dir", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = json(&out);
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["preset"], "fluid-only");
    for f in ["config.toml", "timeseries.csv", "extras.csv", "summary.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let header = std::fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    assert!(header.starts_with("t,E,D,H,"));

    // the energy of the Taylor–Green vortex decays at 16π²
    let fit = vns(&[
        "fit",
        "--input",
        dir.join("timeseries.csv").to_str().unwrap(),
        "--column",
        "E",
        "--model",
        "exp",
        "--window",
        "0:0.01",
    ]);
    assert!(fit.status.success(), "{}", stderr(&fit));
    let slope = json(&fit)["slope"].as_f64().unwrap();
    let exact = 16.0 * std::f64::consts::PI.powi(2);
    assert!((slope + exact).abs() < 1e-6 * exact, "slope {slope}");
}

#[test]
fn saved_config_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(small_particle_run(&a).status.success());
    let out = vns(&[
        "run",
        "--config",
        a.join("config.toml").to_str().unwrap(),
        "--output.dir",
        b.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["timeseries.csv", "extras.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn compare_oracle_reports_errors() {
    let out = vns(&[
        "compare-oracle",
        "--velocity-nodes",
        "8",
        "--time.t_end",
        "0.1",
        "--particles.count",
        "20000",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = json(&out);
    assert_eq!(report["velocity_nodes"], 8);
    let l1 = report["errors"]["density"]["l1"].as_f64().unwrap();
    assert!(l1.is_finite() && l1 < 0.5, "density error {l1}");
}

#[test]
fn exit_codes() {
    let unknown = vns(&["run", "--preset", "nope"]);
    assert_eq!(unknown.status.code(), Some(2), "{}", stderr(&unknown));
    assert!(stderr(&unknown).contains("unknown preset"));

    let bad_value = vns(&["run", "--preset", "fluid-only", "--time.dt", "-1"]);
    assert_eq!(bad_value.status.code(), Some(2), "{}", stderr(&bad_value));

    let dangling = vns(&["run", "--preset", "fluid-only", "--time.dt"]);
    assert_eq!(dangling.status.code(), Some(2));

    let nothing = vns(&["run"]);
    assert_eq!(nothing.status.code(), Some(2));

    let missing = vns(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(4), "{}", stderr(&missing));

    let no_csv = vns(&["fit", "--input", "/nonexistent/timeseries.csv"]);
    assert_eq!(no_csv.status.code(), Some(4), "{}", stderr(&no_csv));

    let tmp = tempfile::tempdir().unwrap();
    let bad_toml = tmp.path().join("bad.toml");
    std::fs::write(&bad_toml, "[time\nt_end = ").unwrap();
    let parse = vns(&["run", "--config", bad_toml.to_str().unwrap()]);
    assert_eq!(parse.status.code(), Some(2), "{}", stderr(&parse));

    let window = vns(&["fit", "--input", bad_toml.to_str().unwrap(), "--window", "3:1"]);
    assert_ne!(window.status.code(), Some(0));
}
