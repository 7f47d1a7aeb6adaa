//! End-to-end checks of the command layer: file schemas, byte determinism,
//! degenerate-calibration literals, and config validation.

use std::fs;
use std::path::Path;
use std::process::Command;

use tacqr::config::{DiagnosticsOptions, EstimatorSpec, ExperimentConfig};
use tacqr::conformal::MethodKind;
use tacqr::data::Seed;
use tacqr::dgp::{self, DgpSpec, MixtureComponent, WeightedComponent};
use tacqr_cli::commands;

fn base_config(out_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dgp: Some(DgpSpec::M1),
        input_csv: None,
        response_column: None,
        prediction_csv: None,
        n: Some(200),
        replicates: 3,
        alpha: 0.1,
        epsilon: 0.005,
        include_half: true,
        fractions: (0.5, 0.25, 0.25),
        methods: vec![MethodKind::TailAllocation, MethodKind::EqualTailCqr],
        estimator: EstimatorSpec::default(),
        seed: 11,
        out_dir: out_dir.display().to_string(),
        support: None,
        oracle_xs: None,
        diagnostics: DiagnosticsOptions::default(),
    }
}

fn write_m1_csv(path: &Path, n: usize, seed: u64) {
    let data = dgp::sample(&DgpSpec::M1, n, Seed::new(seed)).unwrap();
    let mut text = String::from("x,y\n");
    for i in 0..data.n() {
        text.push_str(&format!("{},{}\n", data.row(i)[0], data.y()[i]));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn simulate_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let mut cfg_a = base_config(&dir_a);
    let mut cfg_b = base_config(&dir_b);
    // Same seed and config must give identical bytes in every artifact.
    cfg_a.seed = 77;
    cfg_b.seed = 77;
    commands::simulate(&cfg_a).unwrap();
    commands::simulate(&cfg_b).unwrap();
    for file in ["replicates.csv", "summary.json"] {
        let a = fs::read(dir_a.join(file)).unwrap();
        let b = fs::read(dir_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let rows = fs::read_to_string(dir_a.join("replicates.csv")).unwrap();
    // Header plus one row per method and replicate.
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
    assert!(rows.starts_with(
        "method,replicate,coverage,mean_length,mean_core_length,Q,infinite_Q_flag,seed"
    ));
    // The echoed config differs only in out_dir.
    let echo: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(dir_a.join("config.echo.json")).unwrap()).unwrap();
    assert_eq!(echo.seed, 77);
}

#[test]
fn simulate_rejects_invalid_alpha_before_computing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(tmp.path());
    cfg.alpha = 1.5;
    assert!(commands::simulate(&cfg).is_err());
    assert!(!tmp.path().join("replicates.csv").exists());
}

#[test]
fn fit_predict_writes_one_row_per_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let train_csv = tmp.path().join("train.csv");
    let pred_csv = tmp.path().join("pred.csv");
    write_m1_csv(&train_csv, 400, 5);
    let mut text = String::from("x\n");
    for i in 0..10 {
        text.push_str(&format!("{}\n", i as f64 / 10.0));
    }
    fs::write(&pred_csv, text).unwrap();

    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg.dgp = None;
    cfg.input_csv = Some(train_csv.display().to_string());
    cfg.response_column = Some("y".into());
    cfg.prediction_csv = Some(pred_csv.display().to_string());
    commands::fit_predict(&cfg).unwrap();

    let rows = fs::read_to_string(out.join("intervals.csv")).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines[0], "row_id,lo,hi,tau_hat,Q");
    assert_eq!(lines.len(), 11);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        let lo: f64 = cells[1].parse().unwrap();
        let hi: f64 = cells[2].parse().unwrap();
        assert!(lo <= hi);
    }
}

#[test]
fn fit_predict_respects_support_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let train_csv = tmp.path().join("train.csv");
    let pred_csv = tmp.path().join("pred.csv");
    write_m1_csv(&train_csv, 400, 6);
    fs::write(&pred_csv, "x\n0.1\n0.5\n0.9\n").unwrap();

    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg.dgp = None;
    cfg.input_csv = Some(train_csv.display().to_string());
    cfg.response_column = Some("y".into());
    cfg.prediction_csv = Some(pred_csv.display().to_string());
    cfg.support = Some((0.0, 1e12));
    commands::fit_predict(&cfg).unwrap();

    let rows = fs::read_to_string(out.join("intervals.csv")).unwrap();
    for line in rows.lines().skip(1) {
        let lo: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(lo >= 0.0, "support bound violated in {line:?}");
    }
}

#[test]
fn fit_predict_degenerate_calibration_emits_inf_literals() {
    let tmp = tempfile::tempdir().unwrap();
    let train_csv = tmp.path().join("train.csv");
    let pred_csv = tmp.path().join("pred.csv");
    // n = 20 gives a 5-point calibration set, so the rank exceeds m.
    write_m1_csv(&train_csv, 20, 7);
    fs::write(&pred_csv, "x\n0.5\n").unwrap();

    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg.dgp = None;
    cfg.input_csv = Some(train_csv.display().to_string());
    cfg.response_column = Some("y".into());
    cfg.prediction_csv = Some(pred_csv.display().to_string());
    cfg.estimator = EstimatorSpec::Knn {
        k: Some(5),
        scale: false,
    };
    commands::fit_predict(&cfg).unwrap();

    let rows = fs::read_to_string(out.join("intervals.csv")).unwrap();
    let line = rows.lines().nth(1).unwrap();
    let cells: Vec<&str> = line.split(',').collect();
    assert_eq!(cells[1], "-inf");
    assert_eq!(cells[2], "inf");
    assert_eq!(cells[4], "inf");
}

#[test]
fn oracle_table_reports_known_laws() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg.dgp = Some(
        dgp::build_custom_mixture(vec![WeightedComponent {
            weight: 1.0,
            component: MixtureComponent::Exponential {
                rate: 1.0,
                shift: 0.0,
            },
        }])
        .unwrap(),
    );
    cfg.oracle_xs = Some(vec![0.0]);
    commands::oracle_table(&cfg).unwrap();
    let rows = fs::read_to_string(out.join("oracle.csv")).unwrap();
    let line = rows.lines().nth(1).unwrap();
    let cells: Vec<&str> = line.split(',').collect();
    let tau_star: f64 = cells[1].parse().unwrap();
    let l_star: f64 = cells[4].parse().unwrap();
    let l_star_eps: f64 = cells[5].parse().unwrap();
    assert!(tau_star.abs() <= 1e-6);
    assert!((l_star - std::f64::consts::LN_10).abs() <= 2e-3);
    assert!((l_star_eps - 2.348865845558052).abs() <= 2e-3);
}

#[test]
fn oracle_table_two_height_mixture_gap_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg.dgp = Some(
        dgp::build_custom_mixture(vec![
            WeightedComponent {
                weight: 0.6,
                component: MixtureComponent::Uniform { lo: 0.0, hi: 1.0 },
            },
            WeightedComponent {
                weight: 0.4,
                component: MixtureComponent::Uniform { lo: 2.0, hi: 3.0 },
            },
        ])
        .unwrap(),
    );
    cfg.oracle_xs = Some(vec![0.0]);
    commands::oracle_table(&cfg).unwrap();
    let rows = fs::read_to_string(out.join("oracle.csv")).unwrap();
    let line = rows.lines().nth(1).unwrap();
    let cells: Vec<&str> = line.split(',').collect();
    let hdr_length: f64 = cells[7].parse().unwrap();
    let gap_bound: f64 = cells[8].parse().unwrap();
    assert!((hdr_length - 1.75).abs() <= 5e-3, "hdr length {hdr_length}");
    assert!((gap_bound - 2.75).abs() <= 5e-3, "gap bound {gap_bound}");
}

#[test]
fn diagnose_refuses_csv_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(tmp.path());
    cfg.dgp = None;
    cfg.input_csv = Some("whatever.csv".into());
    let err = commands::diagnose(&cfg).unwrap_err();
    assert!(err.to_string().contains("dgp"), "{err}");
}

#[test]
fn binary_runs_simulate_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = base_config(&out);
    let cfg_path = tmp.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let status = Command::new(env!("CARGO_BIN_EXE_tacqr"))
        .args([
            "simulate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--threads",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("replicates.csv").exists());
    assert!(out.join("summary.json").exists());
    assert!(out.join("config.echo.json").exists());

    // Flag overrides: --seed and --out redirect the run.
    let out2 = tmp.path().join("run2");
    let status = Command::new(env!("CARGO_BIN_EXE_tacqr"))
        .args([
            "simulate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "99",
            "--out",
            out2.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let echo: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(out2.join("config.echo.json")).unwrap()).unwrap();
    assert_eq!(echo.seed, 99);
}
