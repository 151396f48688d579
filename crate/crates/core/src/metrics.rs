//! Per-epoch metrics rows and their CSV file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss_ce: f64,
    pub loss_reg: f64,
    #[serde(rename = "acc_at_0.5")]
    pub acc_at_05: f64,
    pub acc_raw_box: f64,
    pub mean_iou: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![MetricsRow {
            epoch: 1,
            split: "test".into(),
            loss_ce: 0.1 + 0.2,
            loss_reg: 0.0,
            acc_at_05: 0.875,
            acc_raw_box: 0.5,
            mean_iou: 1.0 / 3.0,
        }];
        write_metrics(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,split,loss_ce,loss_reg,acc_at_0.5,acc_raw_box,mean_iou\n"));
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }
}
