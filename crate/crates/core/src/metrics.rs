//! Metrics file writing and reading: one comma-delimited UTF-8 file per run
//! with a header row and one row per evaluation interval.

use crate::error::HarnessError;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const METRICS_FILE: &str = "metrics.csv";

pub struct MetricsWriter {
    w: BufWriter<File>,
    n_cols: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, HarnessError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(MetricsWriter {
            w,
            n_cols: header.len(),
        })
    }

    pub fn write_row(&mut self, values: &[f64]) -> Result<(), HarnessError> {
        assert_eq!(values.len(), self.n_cols, "metrics row width mismatch");
        let row: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
        writeln!(self.w, "{}", row.join(","))?;
        self.w.flush()?;
        Ok(())
    }
}

/// Read a metrics file back as `(header, rows)`.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| HarnessError::Schema(format!("{} is empty", path.display())))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.parse::<f64>()).collect();
        let row = row.map_err(|e| {
            HarnessError::Schema(format!("{} row {}: {e}", path.display(), i + 2))
        })?;
        if row.len() != header.len() {
            return Err(HarnessError::Schema(format!(
                "{} row {} has {} fields, header has {}",
                path.display(),
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}
