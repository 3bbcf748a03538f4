//! End-to-end checks of the compiled binary: exit codes, stderr wording and
//! output determinism.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qmetro"))
}

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn same_config_and_seed_give_byte_identical_csv() {
    let cfg = config_dir().join("simulate_small.toml");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            path.to_str().unwrap(),
            "simulate",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let other = dir.path().join("c.csv");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        other.to_str().unwrap(),
        "simulate",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_ne!(outputs[0], std::fs::read(&other).unwrap());
}

#[test]
fn simulate_without_any_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // simulate_small.toml minus the [simulate] seed, with no --seed flag
    std::fs::copy(config_dir().join("simulate_small.toml"), &cfg).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("config error"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\n[model]\natom_number = 100\ngamma_eleven = 1.0\n",
    )
    .unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "bound"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("config error"), "{err}");
    assert!(err.contains("gamma_eleven"), "{err}");
}

#[test]
fn noiseless_model_exits_3_with_residual() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "schema_version = 1\n[model]\natom_number = 10\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "bound"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("infeasible"), "{err}");
    assert!(err.contains("residual"), "{err}");
}

#[test]
fn bound_emits_parseable_csv() {
    let cfg = config_dir().join("bound_symmetric.toml");
    let out = run(&["--config", cfg.to_str().unwrap(), "bound"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        vec![
            "atom_number",
            "subchannel",
            "gamma1_per_s",
            "gamma2_per_s",
            "gamma11_per_s",
            "gamma12_per_s",
            "gamma22_per_s",
            "fq_per_time",
            "duality_gap",
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let fq: f64 = rows[0][7].parse().unwrap();
    // symmetric unit rates: fq/T -> 1/gamma = 1
    assert!((fq - 1.0).abs() < 0.05, "fq = {fq}");
}

#[test]
fn check_hls_reports_quadratic_regime_for_two_body_losses() {
    let cfg = config_dir().join("bound_symmetric.toml");
    let out = run(&["--config", cfg.to_str().unwrap(), "check-hls"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("hls_satisfied: true"), "{text}");
    assert!(text.contains("residual:"), "{text}");
}

#[test]
fn check_hls_flags_t2_regime_without_cross_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // gamma11 alone cannot span the generator: T^2 is reachable
    std::fs::write(
        &cfg,
        "schema_version = 1\n[model]\natom_number = 10\ngamma11_per_s = 1.0\n",
    )
    .unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "check-hls"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("hls_satisfied: false"), "{text}");
    assert!(text.contains("T^2"), "{text}");
}

#[test]
fn missing_config_file_exits_2() {
    let out = run(&["--config", "/nonexistent/qmetro.toml", "bound"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("config error"), "{}", stderr(&out));
}
