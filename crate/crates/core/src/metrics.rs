//! Per-epoch training metrics and their line-delimited JSON file format.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One epoch of training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
    pub lr: f64,
    pub mean_hard_set_size: f64,
    pub empty_set_count: usize,
    pub seconds: f64,
}

/// Write records as one JSON object per line.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::format(format!("metrics encode: {e}")))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::format(format!("metrics line: {e}")))
        })
        .collect()
}
