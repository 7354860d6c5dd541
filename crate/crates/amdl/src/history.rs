//! Learning-curve CSV: `epoch,lr,loss_e1..loss_eK,acc_e1..acc_eK`.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back yields the exact records (NaN marks exits not trained that epoch).

use std::path::Path;

use amdl_core::train::{EpochRecord, TrainHistory};

use crate::error::{AppError, AppResult};

pub fn to_csv(history: &TrainHistory) -> String {
    let mut out = history.csv_header();
    out.push('\n');
    for r in &history.records {
        let mut cols = vec![r.epoch.to_string(), r.lr.to_string()];
        cols.extend(r.loss.iter().map(f64::to_string));
        cols.extend(r.val_acc.iter().map(f64::to_string));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> AppResult<TrainHistory> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| AppError::usage(format!("history header: {e}")))?.clone();
    let cols = headers.len();
    if cols < 4 || cols % 2 != 0 || &headers[0] != "epoch" || &headers[1] != "lr" {
        return Err(AppError::usage(format!("unexpected history header '{}'", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let k = (cols - 2) / 2;
    let mut history = TrainHistory::new(k);
    if history.csv_header() != headers.iter().collect::<Vec<_>>().join(",") {
        return Err(AppError::usage("history header does not match its exit count"));
    }
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| AppError::usage(format!("history row {}: {e}", i + 1)))?;
        let bad = |c: usize| AppError::usage(format!("history row {}: bad value '{}'", i + 1, &row[c]));
        let num = |c: usize| row[c].parse::<f64>().map_err(|_| bad(c));
        history.records.push(EpochRecord {
            epoch: row[0].parse().map_err(|_| bad(0))?,
            lr: num(1)?,
            loss: (2..2 + k).map(num).collect::<AppResult<_>>()?,
            val_acc: (2 + k..2 + 2 * k).map(num).collect::<AppResult<_>>()?,
        });
    }
    Ok(history)
}

pub fn write(path: &Path, history: &TrainHistory) -> AppResult<()> {
    std::fs::write(path, to_csv(history)).map_err(|e| AppError::io(path, e))
}

pub fn read(path: &Path) -> AppResult<TrainHistory> {
    from_csv(&std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?)
}
