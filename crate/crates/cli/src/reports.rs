use std::io::Write;
use std::path::Path;

use diffdec_core::oracle::GapReport;
use diffdec_core::train::{CurvePoint, RecoveryRow};

use crate::error::{CliError, Result};

pub const CURVE_HEADER: &str = "step,loss,lr";
pub const RECOVERY_HEADER: &str = "d,linear_rate,ar_rate";
// gen_ppl column is token-weighted: exp of the NLL sum over all scored
// tokens divided by their count, not a per-sequence average
pub const METRICS_HEADER: &str = "run_id,temperature,solver,steps,div,gen_ppl_token_weighted,n_samples";
pub const ORACLE_HEADER: &str = "seed,l,a,k,h_joint,sum_h_local,tc,locality_gap,gap,max_residual";

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.lr));
    }
    write_file(path, &out)
}

pub fn write_recovery_csv(path: &Path, rows: &[RecoveryRow]) -> Result<()> {
    let mut out = String::from(RECOVERY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.d, r.linear_rate, r.ar_rate));
    }
    write_file(path, &out)
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub run_id: String,
    pub temperature: Option<f64>,
    pub solver: Option<String>,
    pub steps: Option<usize>,
    pub div: f64,
    pub gen_ppl: Option<f64>,
    pub n_samples: usize,
}

fn csv_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c == ',' || c == '"' || c == '\n' || c == '\r' { '_' } else { c })
        .collect()
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Appends one row, creating the file with its header first if needed.
pub fn append_metrics_row(path: &Path, row: &MetricsRow) -> Result<()> {
    let needs_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let mut out = String::new();
    if needs_header {
        out.push_str(METRICS_HEADER);
        out.push('\n');
    }
    out.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        csv_safe(&row.run_id),
        opt(&row.temperature),
        opt(&row.solver.as_deref().map(csv_safe)),
        opt(&row.steps),
        row.div,
        opt(&row.gen_ppl),
        row.n_samples
    ));
    f.write_all(out.as_bytes())
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OracleRow {
    pub seed: u64,
    pub l: usize,
    pub a: usize,
    pub k: usize,
    pub report: GapReport,
}

pub fn write_oracle_csv(path: &Path, rows: &[OracleRow]) -> Result<()> {
    let mut out = String::from(ORACLE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.l,
            r.a,
            r.k,
            r.report.h_joint,
            r.report.sum_h_local,
            r.report.tc,
            r.report.locality_gap,
            r.report.gap,
            r.report.max_residual
        ));
    }
    write_file(path, &out)
}
