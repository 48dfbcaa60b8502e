use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::ComparisonReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format `{other}`"
            ))),
        }
    }
}

/// One row per subset, preceded by `#` lines echoing the configuration.
pub fn report_csv(report: &ComparisonReport) -> Result<String> {
    let mut out = String::new();
    let config = serde_json::to_string(&report.config)?;
    let _ = writeln!(out, "# skewfit {}", report.version);
    let _ = writeln!(
        out,
        "# dataset={} n={} g={}",
        report.dataset, report.n, report.g
    );
    let _ = writeln!(out, "# config={config}");
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["subset".to_string()];
    for k in &report.kinds {
        for field in ["loglik", "bic", "error"] {
            header.push(format!("{k}_{field}"));
        }
    }
    header.extend(["winner_loglik", "winner_bic", "winner_error"].map(String::from));
    w.write_record(&header)?;
    for run in &report.runs {
        let mut row = vec![run.columns.join("+")];
        for f in &run.fits {
            match f {
                Some(s) => row.extend([s.loglik, s.bic, s.error_rate].map(|v| v.to_string())),
                None => row.extend(["", "", ""].map(String::from)),
            }
        }
        row.extend([run.winner_loglik, run.winner_bic, run.winner_error].map(|o| o.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    Ok(out)
}

pub fn emit_report(
    report: &ComparisonReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_csv(report)?,
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON report.
pub fn load_report(path: impl AsRef<Path>) -> Result<ComparisonReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
