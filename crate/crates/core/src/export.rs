//! Aggregate metrics from several runs (typically seeds of one method) into
//! a single table of per-interval means and confidence intervals, ready for
//! external plotting.

use crate::error::HarnessError;
use crate::metrics::{read_metrics, MetricsWriter, METRICS_FILE};
use crate::numcheck::{ci95_mean, mean};
use std::path::Path;

/// Combine `<run>/metrics.csv` from each run directory. All runs must share
/// the metrics schema and evaluation grid. The output keeps the `env_steps`
/// column and emits `<col>_mean` and `<col>_ci95` per remaining column.
pub fn export_curves(run_dirs: &[&Path], out_file: &Path) -> Result<(), HarnessError> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Invalid("no run directories given".into()));
    }
    let mut tables = Vec::with_capacity(run_dirs.len());
    let mut header: Option<Vec<String>> = None;
    for dir in run_dirs {
        let (h, rows) = read_metrics(&dir.join(METRICS_FILE))?;
        match &header {
            None => header = Some(h),
            Some(expect) if *expect != h => {
                return Err(HarnessError::Schema(format!(
                    "{} has a different metrics schema",
                    dir.display()
                )))
            }
            _ => {}
        }
        tables.push((dir, rows));
    }
    let header = header.unwrap();
    let steps_col = header
        .iter()
        .position(|c| c == "env_steps")
        .ok_or_else(|| HarnessError::Schema("missing env_steps column".into()))?;

    let n_rows = tables[0].1.len();
    for (dir, rows) in &tables {
        if rows.len() != n_rows {
            return Err(HarnessError::Schema(format!(
                "{} has {} rows, expected {}",
                dir.display(),
                rows.len(),
                n_rows
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row[steps_col] != tables[0].1[i][steps_col] {
                return Err(HarnessError::Schema(format!(
                    "{} row {} is misaligned on env_steps",
                    dir.display(),
                    i + 2
                )));
            }
        }
    }

    let mut out_header = vec!["env_steps".to_string()];
    for (c, name) in header.iter().enumerate() {
        if c != steps_col {
            out_header.push(format!("{name}_mean"));
            out_header.push(format!("{name}_ci95"));
        }
    }
    let header_refs: Vec<&str> = out_header.iter().map(|s| s.as_str()).collect();
    let mut writer = MetricsWriter::create(out_file, &header_refs)?;
    for i in 0..n_rows {
        let mut row = vec![tables[0].1[i][steps_col]];
        for c in 0..header.len() {
            if c == steps_col {
                continue;
            }
            let samples: Vec<f64> = tables.iter().map(|(_, rows)| rows[i][c]).collect();
            row.push(mean(&samples));
            row.push(ci95_mean(&samples));
        }
        writer.write_row(&row)?;
    }
    Ok(())
}
