//! Per-period metrics rows and their CSV / JSON-lines sinks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "period,qoe,hit_req,hit_qoe,served,stalled,decision_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub period: usize,
    pub qoe: f64,
    pub hit_req: f64,
    pub hit_qoe: f64,
    pub served: usize,
    pub stalled: usize,
    pub decision_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" => Ok(Format::JsonLines),
            other => Err(Error::config(format!("unknown metrics format {other:?}"))),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}"))),
    }
}

/// Writes any serialisable rows as CSV with a header line. An empty slice of
/// metrics rows still produces the metrics header.
pub fn write_csv<T: Serialize>(rows: &[T], path: &Path, header: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    if rows.is_empty() {
        if let Some(h) = header {
            writeln!(out, "{h}").map_err(|e| Error::io(path, e))?;
        }
        return out.flush().map_err(|e| Error::io(path, e));
    }
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(rows, path, Some(METRICS_HEADER)),
        Format::JsonLines => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = BufWriter::new(file);
            for row in rows {
                let line = serde_json::to_string(row).expect("metrics rows serialise");
                writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
            }
            out.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_metrics(path: &Path, format: Format) -> Result<Vec<MetricsRow>> {
    match format {
        Format::Csv => read_csv(path),
        Format::JsonLines => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            BufReader::new(file)
                .lines()
                .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
                .map(|line| {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    serde_json::from_str(&line).map_err(|e| {
                        Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
                    })
                })
                .collect()
        }
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
