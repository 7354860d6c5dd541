//! Per-exit evaluation results and the selection report.

use std::path::{Path, PathBuf};

use amdl_core::model::{count_params, BaseNetwork, NetworkConfig};
use amdl_core::policy::{best_row, report_rows, AccuracyTable, BestRow, ReportRow, SelectionResult};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// One exit of one trained configuration, as written to `*.eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub domain: String,
    pub config: String,
    pub exit: usize,
    /// Percent.
    pub accuracy: f64,
    /// Base plus adapter parameters through this exit.
    pub params: usize,
    pub param_fraction: f64,
}

pub const EVAL_SUFFIX: &str = ".eval.csv";

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::io(path, io),
        other => AppError::usage(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_eval(path: &Path, rows: &[EvalRow]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_eval(path: &Path) -> AppResult<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Every `*.eval.csv` in `dir`, in file-name order.
pub fn eval_files(dir: &Path) -> AppResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(EVAL_SUFFIX)))
        .collect();
    files.sort();
    Ok(files)
}

/// Accumulated results: the selection table plus the rows it came from.
#[derive(Debug, Clone)]
pub struct Results {
    pub table: AccuracyTable,
    pub rows: Vec<EvalRow>,
}

/// Groups evaluation rows into a selection table. Rows sharing a
/// configuration, exit and parameter count form one table row; the
/// parameter count is the cost.
pub fn results_table(rows: Vec<EvalRow>) -> AppResult<Results> {
    if rows.is_empty() {
        return Err(AppError::usage("no evaluation results found"));
    }
    let mut domains: Vec<String> = Vec::new();
    for r in &rows {
        if !domains.contains(&r.domain) {
            domains.push(r.domain.clone());
        }
    }
    let num_exits = rows.iter().map(|r| r.exit).max().unwrap_or(0);
    let mut keys: Vec<(String, usize, usize)> = Vec::new();
    for r in &rows {
        let k = (r.config.clone(), r.exit, r.params);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut table = AccuracyTable::new(domains.clone(), num_exits);
    for (config, exit, params) in keys {
        let mut values = vec![None; domains.len()];
        for r in rows.iter().filter(|r| r.config == config && r.exit == exit && r.params == params) {
            let d = domains.iter().position(|d| *d == r.domain).unwrap();
            if values[d].replace(r.accuracy).is_some() {
                return Err(AppError::usage(format!("duplicate result for {} / {config} / exit {exit}", r.domain)));
            }
        }
        table.push(&config, exit, params as f64, values)?;
    }
    Ok(Results { table, rows })
}

pub fn load_results(dir: &Path) -> AppResult<Results> {
    let mut rows = Vec::new();
    for f in eval_files(dir)? {
        rows.extend(read_eval(&f)?);
    }
    results_table(rows)
}

/// Report rows for live results, parameter figures taken from the
/// evaluation rows themselves.
pub fn live_report(results: &Results, best: &BestRow) -> Vec<ReportRow> {
    best.results
        .iter()
        .map(|s| {
            let src = results
                .rows
                .iter()
                .find(|r| r.domain == s.domain && r.config == s.config && r.exit == s.exit && r.params as f64 == s.cost)
                .expect("selection comes from these rows");
            row(s, src.params, src.param_fraction)
        })
        .collect()
}

/// Report rows for the reference table, costed with the ledger of the
/// 26-layer network (heads excluded, so the class count is irrelevant).
pub fn fixture_report(best: &BestRow) -> AppResult<Vec<ReportRow>> {
    let base = BaseNetwork::<f32>::build(&NetworkConfig::resnet26(), 1, 0)?;
    Ok(report_rows(&best.results, &count_params(&base, None))?)
}

fn row(s: &SelectionResult, params: usize, param_fraction: f64) -> ReportRow {
    ReportRow {
        domain: s.domain.clone(),
        config: s.config.clone(),
        exit: s.exit,
        accuracy: s.accuracy,
        baseline: s.baseline,
        loss: s.loss,
        params,
        param_fraction,
        difficulty: s.difficulty,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub domain: String,
    pub config: String,
    pub exit: usize,
    pub accuracy: f64,
    pub baseline: f64,
    pub loss: f64,
    pub params: usize,
    pub param_fraction: f64,
    pub difficulty: String,
}

impl From<&ReportRow> for ReportRecord {
    fn from(r: &ReportRow) -> Self {
        Self {
            domain: r.domain.clone(),
            config: r.config.clone(),
            exit: r.exit,
            accuracy: r.accuracy,
            baseline: r.baseline,
            loss: r.loss,
            params: r.params,
            param_fraction: r.param_fraction,
            difficulty: r.difficulty.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub domains: usize,
    pub mean_accuracy: f64,
    pub mean_loss: f64,
    pub total_params: usize,
    pub mean_param_fraction: f64,
    pub easy: usize,
    pub intermediate: usize,
    pub challenging: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub threshold: f64,
    pub rows: Vec<ReportRecord>,
    pub totals: Totals,
}

impl ReportDocument {
    pub fn new(threshold: f64, rows: &[ReportRow]) -> Self {
        let rows: Vec<ReportRecord> = rows.iter().map(ReportRecord::from).collect();
        let n = rows.len().max(1) as f64;
        let count = |d: &str| rows.iter().filter(|r| r.difficulty == d).count();
        let totals = Totals {
            domains: rows.len(),
            mean_accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
            mean_loss: rows.iter().map(|r| r.loss).sum::<f64>() / n,
            total_params: rows.iter().map(|r| r.params).sum(),
            mean_param_fraction: rows.iter().map(|r| r.param_fraction).sum::<f64>() / n,
            easy: count("easy"),
            intermediate: count("intermediate"),
            challenging: count("challenging"),
        };
        Self { threshold, rows, totals }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        if self.rows.is_empty() {
            w.write_record(amdl_core::policy::REPORT_COLUMNS).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("UTF-8")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

/// Threshold selection over `table`.
pub fn select(table: &AccuracyTable, t: f64) -> AppResult<BestRow> {
    Ok(best_row(table, t)?)
}
