//! CSV and JSON artifacts written by the CLI.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::simulator::{EnsembleSummary, Z_975};
use crate::VERSION;

/// Long-format ensemble CSV: `checkpoint,metric,mean,ci_half_width`.
pub fn write_ensemble_csv<W: Write>(writer: W, summary: &EnsembleSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["checkpoint", "metric", "mean", "ci_half_width"])?;
    for m in &summary.metrics {
        for (i, c) in summary.checkpoints.iter().enumerate() {
            out.write_record([
                c.to_string(),
                m.metric.name().to_string(),
                m.mean[i].to_string(),
                m.ci_half_width[i].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-run values at the last checkpoint: `seed,<metric>...`.
pub fn write_final_values_csv<W: Write>(writer: W, summary: &EnsembleSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["seed".to_string()];
    header.extend(summary.metrics.iter().map(|m| m.metric.name().to_string()));
    out.write_record(&header)?;
    for t in &summary.traces {
        let mut row = vec![t.seed.to_string()];
        row.extend(
            t.values
                .iter()
                .map(|v| v.last().map(f64::to_string).unwrap_or_default()),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Metadata block embedded in every JSON artifact.
pub fn metadata<C: Serialize>(command: &str, config: &C) -> Result<Value> {
    Ok(json!({
        "tool": "aoi-sampler",
        "version": VERSION,
        "command": command,
        "config": serde_json::to_value(config)?,
    }))
}

/// JSON summary of an ensemble, including how its statistics were formed.
pub fn ensemble_json<C: Serialize>(
    command: &str,
    config: &C,
    summary: &EnsembleSummary,
) -> Result<Value> {
    Ok(json!({
        "metadata": metadata(command, config)?,
        "statistics": {
            "confidence_interval": "normal approximation, 95%",
            "z": Z_975,
            "runs": summary.runs,
            "time_avg_aoi_checkpoint_time": "checkpoint * mean delay",
            "time_unit": summary.time_unit,
        },
        "summary": serde_json::to_value(summary)?,
    }))
}

/// Pretty JSON terminated by a newline.
pub fn write_json<W: Write>(mut writer: W, value: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writeln!(writer)?;
    Ok(())
}
