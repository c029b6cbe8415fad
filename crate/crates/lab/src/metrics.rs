//! Per-round metrics CSV.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const HEADER: [&str; 7] = ["round", "train_loss", "test_loss", "test_acc", "uplink_elems", "downlink_elems", "wall_ms"];

/// One line of `metrics.csv`. Everything except `wall_ms` is a pure function
/// of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub uplink_elems: u64,
    pub downlink_elems: u64,
    pub wall_ms: u64,
}

/// Writes the header on creation and flushes after every row, so a killed
/// run leaves a readable prefix.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| LabError::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(HEADER)?;
        inner.flush().map_err(|e| LabError::io(path, e))?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| LabError::io("metrics.csv", e))?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != HEADER {
        return Err(LabError::CheckFailed(format!("{}: unexpected header {header:?}", path.display())));
    }
    reader.deserialize().map(|r| r.map_err(LabError::from)).collect()
}

/// The CSV text with the `wall_ms` column removed; equal for two runs of the
/// same config.
pub fn canonical_metrics(path: &Path) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = csv::Writer::from_writer(Vec::new());
    for record in reader.records() {
        let record = record?;
        out.write_record(record.iter().take(HEADER.len() - 1))?;
    }
    let mut bytes = out.into_inner().map_err(|e| LabError::io(path, e.into_error()))?;
    bytes.flush().map_err(|e| LabError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| LabError::CheckFailed(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, wall_ms: u64) -> MetricsRow {
        MetricsRow {
            round,
            train_loss: 0.1 + round as f64,
            test_loss: 1.0 / 3.0,
            test_acc: 0.5,
            uplink_elems: 10,
            downlink_elems: 20,
            wall_ms,
        }
    }

    #[test]
    fn rows_round_trip_and_canonical_form_ignores_timing() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        for (path, wall) in [(&a, 5), (&b, 900)] {
            let mut w = MetricsWriter::create(path).unwrap();
            w.append(&row(1, wall)).unwrap();
            w.append(&row(2, wall + 1)).unwrap();
        }
        assert_eq!(read_metrics(&a).unwrap(), vec![row(1, 5), row(2, 6)]);
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.starts_with("round,train_loss,test_loss,test_acc,uplink_elems,downlink_elems,wall_ms\n"));
        let canon = canonical_metrics(&a).unwrap();
        assert_eq!(canon, canonical_metrics(&b).unwrap());
        assert!(canon.starts_with("round,train_loss,test_loss,test_acc,uplink_elems,downlink_elems\n"));
    }
}
