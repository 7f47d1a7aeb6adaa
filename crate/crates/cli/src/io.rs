//! Deterministic file output: fixed column orders, 9-significant-digit
//! shortest round-trip floats, and `inf`/`-inf` as the only non-numeric
//! tokens in CSV cells.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use tacqr::config::ExperimentConfig;
use tacqr::evaluation::{ReplicateResult, RunOutput};

/// Formats a float rounded to 9 significant digits, printed with the
/// shortest representation that round-trips the rounded value.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(config)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One row per method and replicate:
/// `method,replicate,coverage,mean_length,mean_core_length,Q,infinite_Q_flag,seed`.
pub fn write_replicates_csv(path: &Path, rows: &[ReplicateResult]) -> anyhow::Result<()> {
    let mut text =
        String::from("method,replicate,coverage,mean_length,mean_core_length,Q,infinite_Q_flag,seed\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method.label(),
            r.replicate,
            fmt_sig9(r.coverage),
            fmt_sig9(r.mean_length),
            fmt_sig9(r.mean_core_length),
            fmt_sig9(r.radius),
            u8::from(r.infinite_radius),
            r.seed,
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    methods: &'a [tacqr::evaluation::MethodSummary],
    corecomp_checked: usize,
    corecomp_violations: usize,
}

pub fn write_summary_json(path: &Path, out: &RunOutput) -> anyhow::Result<()> {
    write_json(
        path,
        &SummaryFile {
            methods: &out.summaries,
            corecomp_checked: out.corecomp_checked,
            corecomp_violations: out.corecomp_violations,
        },
    )
}

pub fn write_config_echo(path: &Path, config: &ExperimentConfig) -> anyhow::Result<()> {
    write_json(path, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(f64::INFINITY), "inf");
        assert_eq!(fmt_sig9(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(0.9), "0.9");
        // 10 significant digits collapse to 9.
        assert_eq!(fmt_sig9(1.234567891), "1.23456789");
        assert_eq!(fmt_sig9(-std::f64::consts::LN_10), "-2.30258509");
        // Round-trip: parsing the output reproduces the rounded value.
        let s = fmt_sig9(3.2897072539029445);
        assert_eq!(s.parse::<f64>().unwrap(), 3.28970725);
    }
}
