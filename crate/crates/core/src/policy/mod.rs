//! Per-domain exit selection under an accuracy-loss threshold.
//!
//! For a domain, the baseline is the best accuracy any configuration reaches
//! at the last exit. Candidate rows (every configuration and exit) are sorted
//! by parameter cost, then by accuracy, and the first whose loss against the
//! baseline is at most `T` points wins.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ParamLedger;

/// Slack for comparing a loss computed in floating point against `T`.
const LOSS_EPS: f64 = 1e-9;

/// Reference table of published accuracies, one row per (method, exit).
pub const TABLE2_CSV: &str = include_str!("table2.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub config: String,
    /// 1-based exit.
    pub exit: usize,
    /// Parameters needed to answer from this exit; only the ordering matters.
    pub cost: f64,
    /// Accuracy in percent per domain column; `None` where not reported.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub domains: Vec<String>,
    pub num_exits: usize,
    pub rows: Vec<AccuracyRow>,
    /// Domains always answered by the last exit of the best baseline row.
    pub pinned: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Difficulty {
    Easy,
    Intermediate,
    Challenging,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Intermediate => "intermediate",
            Difficulty::Challenging => "challenging",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub domain: String,
    pub config: String,
    pub exit: usize,
    pub num_exits: usize,
    pub accuracy: f64,
    pub baseline: f64,
    /// `baseline - accuracy`.
    pub loss: f64,
    pub cost: f64,
    pub difficulty: Difficulty,
}

/// Exit 1 is easy, the last exit challenging, anything between intermediate.
pub fn difficulty_class(result: &SelectionResult) -> Difficulty {
    if result.exit <= 1 {
        Difficulty::Easy
    } else if result.exit >= result.num_exits {
        Difficulty::Challenging
    } else {
        Difficulty::Intermediate
    }
}

impl AccuracyTable {
    pub fn new(domains: Vec<String>, num_exits: usize) -> Self {
        Self { domains, num_exits, rows: Vec::new(), pinned: Vec::new() }
    }

    pub fn push(&mut self, config: &str, exit: usize, cost: f64, values: Vec<Option<f64>>) -> Result<()> {
        if exit == 0 || exit > self.num_exits {
            return Err(Error::Config(format!("exit {exit} outside 1..={}", self.num_exits)));
        }
        if values.len() != self.domains.len() {
            return Err(Error::Config(format!("{} values for {} domains", values.len(), self.domains.len())));
        }
        if let Some(v) = values.iter().flatten().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::Config(format!("accuracy {v} outside [0, 100]")));
        }
        if !cost.is_finite() {
            return Err(Error::Config(format!("cost {cost}")));
        }
        self.rows.push(AccuracyRow { config: config.into(), exit, cost, values });
        Ok(())
    }

    pub fn domain_index(&self, domain: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == domain)
    }

    /// The reference table: the seven multi-exit configurations, three
    /// exits each, with the exit index as cost. Rows without exits (the
    /// single-network baselines and the summary row) are left out.
    pub fn table2() -> Self {
        parse_fixture(TABLE2_CSV).expect("embedded fixture parses").0
    }
}

/// A parsed reference table plus the summary ("Best") row.
pub fn table2_with_best() -> (AccuracyTable, Vec<f64>) {
    parse_fixture(TABLE2_CSV).expect("embedded fixture parses")
}

fn parse_fixture(text: &str) -> Result<(AccuracyTable, Vec<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Fixture { line: 1, detail: "empty".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    // method, exit, %P, #P, domains..., mean
    if cols.len() < 6 || cols[0] != "method" || cols[1] != "exit" || cols[cols.len() - 1] != "mean" {
        return Err(Error::Fixture { line: 1, detail: format!("unexpected header '{header}'") });
    }
    let domains: Vec<String> = cols[4..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut table = AccuracyTable::new(domains, 3);
    table.pinned.push("ImNet".into());
    let mut best = Vec::new();
    for (i, line) in lines {
        let fail = |detail: String| Error::Fixture { line: i + 1, detail };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(fail(format!("{} fields, expected {}", f.len(), cols.len())));
        }
        let values = f[4..f.len() - 1]
            .iter()
            .map(|v| match *v {
                "-" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|_| fail(format!("bad accuracy '{v}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if f[1].is_empty() {
            if f[0].starts_with("Best") {
                best = values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            }
            continue;
        }
        let exit: usize = f[1].parse().map_err(|_| fail(format!("bad exit '{}'", f[1])))?;
        table.push(f[0], exit, exit as f64, values).map_err(|e| fail(e.to_string()))?;
    }
    Ok((table, best))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&t) {
        return Err(Error::Config(format!("threshold {t} outside [0, 100]")));
    }
    Ok(())
}

/// Cheapest row of `domain` within `t` points of the last-exit baseline.
pub fn select_exit(table: &AccuracyTable, domain: &str, t: f64) -> Result<SelectionResult> {
    check_threshold(t)?;
    let d = table.domain_index(domain).ok_or_else(|| Error::Config(format!("unknown domain '{domain}'")))?;
    let mut rows: Vec<(&AccuracyRow, f64)> = table.rows.iter().filter_map(|r| r.values[d].map(|v| (r, v))).collect();
    let k = table.num_exits;
    let (base_row, baseline) = rows
        .iter()
        .filter(|(r, _)| r.exit == k)
        .copied()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .ok_or_else(|| Error::MissingBaseline { domain: domain.into(), exit: k })?;
    rows.sort_by(|(ra, va), (rb, vb)| {
        ra.cost
            .total_cmp(&rb.cost)
            .then(vb.total_cmp(va))
            .then(ra.exit.cmp(&rb.exit))
            .then_with(|| ra.config.cmp(&rb.config))
    });
    let pinned = table.pinned.iter().any(|p| p == domain);
    let (row, acc) = if pinned {
        (base_row, baseline)
    } else {
        rows.into_iter().find(|(_, v)| baseline - v <= t + LOSS_EPS).unwrap_or((base_row, baseline))
    };
    let mut result = SelectionResult {
        domain: domain.into(),
        config: row.config.clone(),
        exit: row.exit,
        num_exits: k,
        accuracy: acc,
        baseline,
        loss: baseline - acc,
        cost: row.cost,
        difficulty: Difficulty::Easy,
    };
    result.difficulty = difficulty_class(&result);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestRow {
    pub results: Vec<SelectionResult>,
    pub mean: f64,
}

/// [`select_exit`] for every domain of the table.
pub fn best_row(table: &AccuracyTable, t: f64) -> Result<BestRow> {
    let results = table.domains.iter().map(|d| select_exit(table, d, t)).collect::<Result<Vec<_>>>()?;
    let mean = results.iter().map(|r| r.accuracy).sum::<f64>() / results.len().max(1) as f64;
    Ok(BestRow { results, mean })
}

/// One line of the selection report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub domain: String,
    pub config: String,
    pub exit: usize,
    pub accuracy: f64,
    pub baseline: f64,
    pub loss: f64,
    /// Base plus adapter parameters through the chosen exit.
    pub params: usize,
    /// `params` over the fully adapted network.
    pub param_fraction: f64,
    pub difficulty: Difficulty,
}

pub const REPORT_COLUMNS: [&str; 9] = ["domain", "config", "exit", "accuracy", "baseline", "loss", "params", "param_fraction", "difficulty"];

/// Attaches parameter costs from `ledger` to each selection.
pub fn report_rows(results: &[SelectionResult], ledger: &ParamLedger) -> Result<Vec<ReportRow>> {
    results
        .iter()
        .map(|r| {
            if r.exit == 0 || r.exit > ledger.num_exits() {
                return Err(Error::Config(format!("exit {} not in the parameter ledger", r.exit)));
            }
            Ok(ReportRow {
                domain: r.domain.clone(),
                config: r.config.clone(),
                exit: r.exit,
                accuracy: r.accuracy,
                baseline: r.baseline,
                loss: r.loss,
                params: ledger.cumulative[r.exit - 1],
                param_fraction: ledger.fraction_at(r.exit),
                difficulty: r.difficulty,
            })
        })
        .collect()
}
