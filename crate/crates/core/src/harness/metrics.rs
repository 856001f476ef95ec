use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::config::MetricsFormat;
use crate::error::{Error, Result};

/// Metrics of one evaluated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub clean_acc: f64,
    /// Robust accuracy per evaluation attack, in config order.
    pub robust_acc: Vec<(String, f64)>,
    pub mean_train_loss: Option<f64>,
    pub mean_bias: Option<f64>,
    pub mean_variance: Option<f64>,
    pub wall_ms: u64,
}

impl RoundRecord {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["round".to_string(), "clean_acc".to_string()];
        cols.extend(self.robust_acc.iter().map(|(n, _)| n.clone()));
        cols.extend(["mean_train_loss", "mean_bias", "mean_variance", "wall_ms"].map(String::from));
        cols
    }

    fn values(&self) -> Vec<Value> {
        let num = |v: f64| serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        let opt = |v: Option<f64>| v.map_or(Value::Null, num);
        let mut vals = vec![Value::from(self.round), num(self.clean_acc)];
        vals.extend(self.robust_acc.iter().map(|(_, a)| num(*a)));
        vals.extend([
            opt(self.mean_train_loss),
            opt(self.mean_bias),
            opt(self.mean_variance),
            Value::from(self.wall_ms),
        ]);
        vals
    }

    /// JSON object with keys in CSV column order.
    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self.columns().into_iter().zip(self.values()).collect();
        Value::Object(map)
    }

    fn csv_cells(&self) -> Vec<String> {
        self.values()
            .into_iter()
            .map(|v| match v {
                Value::Null => String::new(),
                other => other.to_string(),
            })
            .collect()
    }
}

/// File name used for each format inside a run directory.
pub fn metrics_path(dir: &Path, format: MetricsFormat) -> PathBuf {
    match format {
        MetricsFormat::Csv => dir.join("metrics.csv"),
        MetricsFormat::Jsonl => dir.join("metrics.jsonl"),
    }
}

/// Appends `records` to `path`. A CSV header is written only when the file
/// is new or empty; appending to a CSV whose header differs is an error.
pub fn emit_metrics(records: &[RoundRecord], path: &Path, format: MetricsFormat) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    let existing = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    match format {
        MetricsFormat::Csv => {
            let header = first.columns();
            if existing == 0 {
                out.extend(header.join(",").into_bytes());
                out.push(b'\n');
            } else {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let on_disk = text.lines().next().unwrap_or("");
                if on_disk != header.join(",") {
                    return Err(Error::parse(path, format!("existing header `{on_disk}` differs from this run's columns")));
                }
            }
            let mut writer = ::csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
            for r in records {
                if r.columns() != header {
                    return Err(Error::parse(path, "records disagree on attack columns"));
                }
                writer.write_record(r.csv_cells()).map_err(|e| Error::parse(path, e.to_string()))?;
            }
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
        MetricsFormat::Jsonl => {
            for r in records {
                out.extend(r.to_json().to_string().into_bytes());
                out.push(b'\n');
            }
        }
    }
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
