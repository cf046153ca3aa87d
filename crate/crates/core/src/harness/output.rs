//! Report files: `sweep.csv`, `corrector.csv`, `long.csv`, `config.json`, `report.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CheckRow, ExperimentConfig, SweepReport};
use crate::error::{Error, Result};
use crate::pde::GridFunction;

/// Everything one CLI verb produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub verb: String,
    pub pass: bool,
    pub checks: Vec<CheckRow>,
    pub sweep: Option<SweepReport>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_sweep_csv(path: &Path, sweep: Option<&SweepReport>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "eps", "N", "l2_dist", "J_eps", "J_mu", "gap", "trace_mean", "hminus", "secs", "status",
    ])?;
    for r in sweep.map(|s| s.rows.as_slice()).unwrap_or_default() {
        w.write_record([
            r.eps.to_string(),
            r.n.to_string(),
            r.l2_dist.to_string(),
            r.j_eps.to_string(),
            r.j_mu.to_string(),
            r.gap.to_string(),
            r.trace_mean.to_string(),
            r.hminus.to_string(),
            r.secs.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_checks_csv(path: &Path, checks: &[CheckRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["suite", "check", "eps", "value", "target", "pass"])?;
    for c in checks {
        let pass = match c.pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "info",
        };
        w.write_record([
            c.suite.clone(),
            c.check.clone(),
            opt(c.eps),
            c.value.to_string(),
            opt(c.target),
            pass.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_long_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["experiment", "eps", "metric", "value"])?;
    for c in &report.checks {
        w.write_record([format!("{}/{}", report.verb, c.suite), opt(c.eps), c.check.clone(), c.value.to_string()])?;
    }
    if let Some(s) = &report.sweep {
        for r in &s.rows {
            let metrics = [
                ("l2_dist", r.l2_dist),
                ("limit_l2", r.limit_l2),
                ("J_eps", r.j_eps),
                ("J_mu", r.j_mu),
                ("gap", r.gap),
                ("trace_mean", r.trace_mean),
                ("limit_trace_mean", r.limit_trace_mean),
                ("hminus", r.hminus),
                ("sandwich_energy", r.sandwich_energy),
                ("secs", r.secs),
            ];
            for (m, v) in metrics {
                w.write_record([format!("{}/sweep", report.verb), r.eps.to_string(), m.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the report set into `dir`, creating it if needed.
pub fn emit_outputs(report: &RunReport, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_sweep_csv(&dir.join("sweep.csv"), report.sweep.as_ref())?;
    write_checks_csv(&dir.join("corrector.csv"), &report.checks)?;
    write_long_csv(&dir.join("long.csv"), report)?;
    write_json(&dir.join("config.json"), config)?;
    write_json(&dir.join("report.json"), report)
}

/// Binary dumps plus mid-plane and Σ slices of a solved grid function.
pub fn write_grid_outputs(u: &GridFunction, stem: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    u.write_binary(&dir.join(format!("{stem}.grdf")))?;
    let n = u.grid.n();
    u.write_csv_slice(&dir.join(format!("{stem}_sigma.csv")), 2, 0)?;
    u.write_csv_slice(&dir.join(format!("{stem}_midx.csv")), 0, n / 2)
}
