use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybrid-traffic"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_trajectories(path: &Path) {
    let mut text = String::from("vehicle_id,t,x,y\n");
    for v in 0..4 {
        for k in 0..30 {
            let t = k as f64;
            let x = 10.0 * v as f64 + (8.0 + v as f64) * t;
            let y = 0.05 * (t * 0.3 + v as f64).sin();
            text.push_str(&format!("car{v},{t},{x},{y}\n"));
        }
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["fp-solve", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["fp-solve", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = run(&["fp-solve", "--set", "n_x=1", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_x"), "{}", stderr(&out));

    let out = run(&["fp-solve", "--set", "sigma_squared=3", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sigma_squared"), "{}", stderr(&out));
}

#[test]
fn oversized_fixed_step_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fp-solve",
        "--set",
        "stepper=explicit",
        "--set",
        "dt_policy=fixed",
        "--set",
        "dt_value=10",
        "--set",
        "t_max=20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn fp_solve_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fp-solve",
        "--set",
        "n_x=20",
        "--set",
        "n_y=2",
        "--set",
        "t_max=1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["density.csv", "density.bin", "fp_log.csv"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("fp_log.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "mass").unwrap();
    for row in rdr.records() {
        let mass: f64 = row.unwrap()[col].parse().unwrap();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"n_x": 10, "n_y": 1, "t_max": 0.5, "rho": 0.7}"#).unwrap();
    let out = run(&[
        "fp-solve",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "rho=0.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let density = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert_eq!(density.lines().count(), 1 + 10);
}

#[test]
fn hybrid_is_reproducible_for_a_seed() {
    let run_once = |dir: &Path| {
        let out = run(&[
            "hybrid",
            "--set",
            "n_x=10",
            "--set",
            "n_y=9",
            "--set",
            "n_particles=2000",
            "--set",
            "horizon=0.2",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(dir.join("density.bin")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_once(a.path()), run_once(b.path()));
}

#[test]
fn ingest_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("traj.csv");
    write_trajectories(&input);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = run(&[
            "ingest",
            "--input",
            input.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(std::fs::read(out_dir.join("samples.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("t_bin,x_bin,rho_norm,ux_norm,uy_norm"));
    assert!(text.lines().count() > 1);
}

#[test]
fn ingest_rejects_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "id,time,x,y\na,0,0,0\n").unwrap();
    let out = run(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_single_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "validate",
        "--only",
        "c8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS] c8"), "{stdout}");
    let json = std::fs::read_to_string(dir.path().join("validation.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed[0]["id"], "c8");
}
