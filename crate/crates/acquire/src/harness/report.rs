use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::MetricsReport;
use crate::error::{Error, Result};

/// Fixed-width scientific notation with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `summary.json`, `metrics.csv`, and `trajectories.csv` when any
/// trial ran dynamics. Returns the paths written.
pub fn emit_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let summary = dir.join("summary.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&summary, json + "\n").map_err(|e| Error::io(&summary, e))?;
    written.push(summary);

    let metrics = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics).map_err(|e| csv_err(&metrics, e))?;
    w.write_record(["strategy", "trial", "k", "total_loss", "fair_objective", "loss_evals", "pref_queries"])
        .map_err(|e| csv_err(&metrics, e))?;
    for t in &report.trials {
        w.write_record([
            t.strategy.to_string(),
            t.trial.to_string(),
            t.k.to_string(),
            format_float(t.total_loss),
            format_float(t.fair_objective),
            t.loss_evals.to_string(),
            t.pref_queries.to_string(),
        ])
        .map_err(|e| csv_err(&metrics, e))?;
    }
    w.flush().map_err(|e| Error::io(&metrics, e))?;
    written.push(metrics);

    if report.has_trajectories() {
        let path = dir.join("trajectories.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(["strategy", "trial", "iter", "total_loss", "fair_objective"])
            .map_err(|e| csv_err(&path, e))?;
        for t in &report.trials {
            let Some(traj) = &t.trajectory else { continue };
            for (iter, (loss, fair)) in traj.total_loss.iter().zip(&traj.fair_objective).enumerate() {
                w.write_record([
                    t.strategy.to_string(),
                    t.trial.to_string(),
                    iter.to_string(),
                    format_float(*loss),
                    format_float(*fair),
                ])
                .map_err(|e| csv_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
