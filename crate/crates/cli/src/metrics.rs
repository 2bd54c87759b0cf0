//! Experimental output: one `MetricsRecord` per phase/epoch, appended to a
//! CSV and a JSON-lines file with identical fields. Rows are written whole
//! (one `write_all` per line), so records from distinct runs never
//! interleave within a row.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const CSV_HEADER: &str = "run_id,phase,epoch,loss,accuracy,wall_time_s,param_count,timestamp";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub phase: String,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub param_count: usize,
    pub timestamp: u64,
}

impl MetricsRecord {
    pub fn new(
        run_id: impl Into<String>,
        phase: &str,
        epoch: usize,
        loss: f64,
        accuracy: f64,
        wall_time_s: f64,
        param_count: usize,
    ) -> Self {
        debug_assert!((0.0..=1.0).contains(&accuracy) || accuracy.is_nan());
        debug_assert!(wall_time_s >= 0.0);
        MetricsRecord {
            run_id: run_id.into(),
            phase: phase.into(),
            epoch,
            loss,
            accuracy,
            wall_time_s,
            param_count,
            timestamp: unix_now(),
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}\n",
            self.run_id,
            self.phase,
            self.epoch,
            self.loss,
            self.accuracy,
            self.wall_time_s,
            self.param_count,
            self.timestamp
        )
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Append-safe writer over `<dir>/metrics.csv` and `<dir>/metrics.jsonl`.
pub struct MetricsWriter {
    csv: File,
    jsonl: File,
    pub csv_path: PathBuf,
    pub jsonl_path: PathBuf,
}

impl MetricsWriter {
    pub fn open(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("metrics.csv");
        let jsonl_path = dir.join("metrics.jsonl");
        let fresh = !csv_path.exists();
        let mut csv = OpenOptions::new().create(true).append(true).open(&csv_path)?;
        if fresh {
            csv.write_all(CSV_HEADER.as_bytes())?;
            csv.write_all(b"\n")?;
        }
        let jsonl = OpenOptions::new().create(true).append(true).open(&jsonl_path)?;
        Ok(MetricsWriter { csv, jsonl, csv_path, jsonl_path })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> CliResult<()> {
        self.csv.write_all(record.csv_row().as_bytes())?;
        let mut line = serde_json::to_string(record)
            .map_err(|e| CliError::Internal(format!("metrics serialization: {e}")))?;
        line.push('\n');
        self.jsonl.write_all(line.as_bytes())?;
        Ok(())
    }
}

/// Parses a metrics CSV back into records (tests and tooling).
pub fn parse_csv(path: &Path) -> CliResult<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(CliError::DataFormat(format!(
                "{}: unexpected metrics header {other:?}",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (ix, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(CliError::DataFormat(format!(
                "{}: row {} has {} columns",
                path.display(),
                ix + 2,
                cols.len()
            )));
        }
        let parse_err = |what: &str| {
            CliError::DataFormat(format!("{}: row {}: bad {what}", path.display(), ix + 2))
        };
        out.push(MetricsRecord {
            run_id: cols[0].to_string(),
            phase: cols[1].to_string(),
            epoch: cols[2].parse().map_err(|_| parse_err("epoch"))?,
            loss: cols[3].parse().map_err(|_| parse_err("loss"))?,
            accuracy: cols[4].parse().map_err(|_| parse_err("accuracy"))?,
            wall_time_s: cols[5].parse().map_err(|_| parse_err("wall_time_s"))?,
            param_count: cols[6].parse().map_err(|_| parse_err("param_count"))?,
            timestamp: cols[7].parse().map_err(|_| parse_err("timestamp"))?,
        });
    }
    Ok(out)
}
