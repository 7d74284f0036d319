use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiments::Outcome;

/// Final JSON document: the effective config, the verdicts and the report.
pub fn document(cfg: &ExperimentConfig, out: &Outcome) -> Result<Value, CliError> {
    Ok(json!({
        "kind": out.kind,
        "config": serde_json::to_value(cfg).map_err(|e| CliError::Output(e.to_string()))?,
        "passed": out.passed(),
        "verdicts": serde_json::to_value(&out.verdicts).map_err(|e| CliError::Output(e.to_string()))?,
        "report": out.report,
    }))
}

pub fn csv_bytes(out: &Outcome) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(&out.table.header).map_err(err)?;
    for row in &out.table.rows {
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

/// Writes `<kind>.json` and `<kind>.csv` into `dir`, creating it.
pub fn write_dir(dir: &Path, cfg: &ExperimentConfig, out: &Outcome) -> Result<(), CliError> {
    let io = |p: &Path, e| CliError::Io(p.display().to_string(), e);
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let json_path = dir.join(format!("{}.json", out.kind));
    let mut text = serde_json::to_string_pretty(&document(cfg, out)?).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| io(&json_path, e))?;
    let csv_path = dir.join(format!("{}.csv", out.kind));
    std::fs::write(&csv_path, csv_bytes(out)?).map_err(|e| io(&csv_path, e))?;
    Ok(())
}

/// One line per verdict on stdout.
pub fn summary(out: &Outcome, w: &mut impl Write) -> std::io::Result<()> {
    for v in &out.verdicts {
        writeln!(w, "{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail)?;
    }
    writeln!(w, "{}: {}", out.kind, if out.passed() { "passed" } else { "failed" })
}
