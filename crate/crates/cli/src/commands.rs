//! The four subcommands: `simulate`, `fit-predict`, `oracle`, `diagnose`.
//!
//! Each command validates the config, computes everything, and only then
//! writes its files, so a failed run leaves no partial output directory
//! contents behind beyond what already existed.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use tacqr::allocation::AllocationGrid;
use tacqr::config::{EstimatorSpec, ExperimentConfig};
use tacqr::conformal::calibrate_tail_allocation;
use tacqr::data::{self, Seed};
use tacqr::dgp;
use tacqr::evaluation::{self};
use tacqr::oracle::{
    brute_force_shortest_interval, check_balanced_density, gap_lower_bound, hdr,
    oracle_allocation, oracle_allocation_restricted,
};
use tacqr::quantile::{default_knn_k, FittedQuantileFamily, PinballOptions};

use crate::io::{self, fmt_sig9};

fn ensure_out_dir(config: &ExperimentConfig) -> anyhow::Result<std::path::PathBuf> {
    let dir = Path::new(&config.out_dir).to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Runs the replicate protocol and writes `replicates.csv`, `summary.json`,
/// and `config.echo.json`.
pub fn simulate(config: &ExperimentConfig) -> anyhow::Result<()> {
    config.validate_simulation()?;
    let out = evaluation::run_replicates(config)?;
    let dir = ensure_out_dir(config)?;
    io::write_replicates_csv(&dir.join("replicates.csv"), &out.replicates)?;
    io::write_summary_json(&dir.join("summary.json"), &out)?;
    io::write_config_echo(&dir.join("config.echo.json"), config)?;
    println!(
        "simulate: {} replicate rows, corecomp {}/{} violations -> {}",
        out.replicates.len(),
        out.corecomp_violations,
        out.corecomp_checked,
        dir.display()
    );
    Ok(())
}

/// Fits the tail-allocation method on one CSV (train/calibration split by
/// the configured fractions and seed; the test fraction is left unused) and
/// writes one interval per prediction row to `intervals.csv`.
pub fn fit_predict(config: &ExperimentConfig) -> anyhow::Result<()> {
    config.validate_fit_predict()?;
    let input = config.input_csv.as_ref().expect("validated");
    let response = config.response_column.as_ref().expect("validated");
    let prediction = config.prediction_csv.as_ref().expect("validated");

    let dataset = data::load_csv(input, response)?;
    let headers = data::csv_headers(input)?;
    let covariates: Vec<String> = headers.into_iter().filter(|h| h != response).collect();

    let split = data::split_dataset(&dataset, config.fractions, Seed::new(config.seed))?;
    let train = dataset.subset(&split.train)?;
    let calib = dataset.subset(&split.calib)?;
    let grid = AllocationGrid::build(config.alpha, calib.n(), config.epsilon, config.include_half)?;
    let levels = grid.endpoint_levels()?;
    let family = match &config.estimator {
        EstimatorSpec::Knn { k, scale } => {
            let k = k.unwrap_or_else(|| default_knn_k(train.n())).clamp(1, train.n());
            if *scale {
                FittedQuantileFamily::fit_knn_scaled(&train, levels, k)?
            } else {
                FittedQuantileFamily::fit_knn(&train, levels, k)?
            }
        }
        EstimatorSpec::LinearPinball {
            iterations,
            step_scale,
        } => FittedQuantileFamily::fit_linear_pinball(
            &train,
            levels,
            PinballOptions {
                iterations: *iterations,
                step_scale: *step_scale,
                ..PinballOptions::default()
            },
        )?,
        EstimatorSpec::LawBacked => bail!("law-backed estimator requires simulated data"),
    };
    let predictor = calibrate_tail_allocation(&family, &grid, &calib, config.support)?;

    let (pred_headers, pred_rows) = data::load_matrix_csv(prediction)?;
    let column_index: Vec<usize> = covariates
        .iter()
        .map(|name| {
            pred_headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("prediction csv is missing covariate column {name:?}"))
        })
        .collect::<anyhow::Result<Vec<usize>>>()?;

    let mut text = String::from("row_id,lo,hi,tau_hat,Q\n");
    for (row_id, row) in pred_rows.iter().enumerate() {
        let x: Vec<f64> = column_index.iter().map(|&j| row[j]).collect();
        let interval = predictor.predict_interval(&x)?;
        let (_, _, sel) = predictor.core_at(&x)?;
        let tau = sel.expect("tail-allocation selection").tau_hat;
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row_id,
            fmt_sig9(interval.lo),
            fmt_sig9(interval.hi),
            fmt_sig9(tau),
            fmt_sig9(predictor.radius()),
        ));
    }
    let dir = ensure_out_dir(config)?;
    fs::write(dir.join("intervals.csv"), text)?;
    io::write_config_echo(&dir.join("config.echo.json"), config)?;
    println!(
        "fit-predict: {} interval rows -> {}",
        pred_rows.len(),
        dir.display()
    );
    Ok(())
}

/// Writes the oracle table for the configured law at each requested
/// covariate value.
///
/// Columns: `x,tau_star,lo,hi,L_star,L_star_eps,hdr_components,hdr_length,`
/// `gap_bound_if_applicable,balanced_density_residual`. HDR components are
/// encoded `lo..hi` joined by `|`; the gap bound cell is empty unless the
/// HDR has exactly two components.
pub fn oracle_table(config: &ExperimentConfig) -> anyhow::Result<()> {
    config.validate()?;
    let Some(spec) = &config.dgp else {
        bail!("the oracle command needs a dgp law in the config");
    };
    let law = dgp::conditional_law(spec)?;
    let xs: Vec<f64> = config.oracle_xs.clone().unwrap_or_else(|| vec![0.0]);
    let fine = config.diagnostics.fine_grid.max(100);

    let mut text = String::from(
        "x,tau_star,lo,hi,L_star,L_star_eps,hdr_components,hdr_length,gap_bound_if_applicable,balanced_density_residual\n",
    );
    for &x in &xs {
        let full = oracle_allocation(law.as_ref(), x, config.alpha, fine)?;
        let restricted =
            oracle_allocation_restricted(law.as_ref(), x, config.alpha, config.epsilon, fine)?;
        let region = hdr(law.as_ref(), x, config.alpha, 1e-6)?;
        let components = region
            .components
            .iter()
            .map(|&(a, b)| format!("{}..{}", fmt_sig9(a), fmt_sig9(b)))
            .collect::<Vec<_>>()
            .join("|");
        let gap_cell = if region.components.len() == 2 {
            fmt_sig9(gap_lower_bound(&region, law.as_ref(), x)?)
        } else {
            String::new()
        };
        let balance = check_balanced_density(law.as_ref(), x, full.tau_star, config.alpha, 1e-3)?;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            fmt_sig9(x),
            fmt_sig9(full.tau_star),
            fmt_sig9(full.lo),
            fmt_sig9(full.hi),
            fmt_sig9(full.length),
            fmt_sig9(restricted.length),
            components,
            fmt_sig9(region.total_length),
            gap_cell,
            fmt_sig9(balance.residual),
        ));
    }
    let dir = ensure_out_dir(config)?;
    fs::write(dir.join("oracle.csv"), text)?;
    io::write_config_echo(&dir.join("config.echo.json"), config)?;
    println!("oracle: {} rows -> {}", xs.len(), dir.display());
    Ok(())
}

/// Runs the diagnostics suite for a law-backed config and writes
/// `diagnostics.json`; prints one pass/fail line per check.
pub fn diagnose(config: &ExperimentConfig) -> anyhow::Result<()> {
    if config.dgp.is_none() {
        bail!(
            "diagnose needs a dgp law: the theory checks compare fitted quantities \
             against exact population values, which csv input cannot provide"
        );
    }
    config.validate_simulation()?;
    let report = evaluation::run_diagnostics(config)?;
    let dir = ensure_out_dir(config)?;
    io::write_json(&dir.join("diagnostics.json"), &report)?;
    io::write_config_echo(&dir.join("config.echo.json"), config)?;
    for check in &report.checks {
        println!(
            "diagnose: {} {} ({})",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    if let Some(note) = &report.stability_note {
        println!("diagnose: note: {note}");
    }
    Ok(())
}

/// Ad-hoc cross-check: compares the allocation search against the
/// endpoint-scan route at one covariate value.
pub fn oracle_cross_check(config: &ExperimentConfig, x: f64) -> anyhow::Result<(f64, f64)> {
    let Some(spec) = &config.dgp else {
        bail!("cross-check needs a dgp law");
    };
    let law = dgp::conditional_law(spec)?;
    let a = oracle_allocation(law.as_ref(), x, config.alpha, config.diagnostics.fine_grid.max(100))?;
    let b = brute_force_shortest_interval(law.as_ref(), x, config.alpha, 2000)?;
    Ok((a.length, b.length))
}
