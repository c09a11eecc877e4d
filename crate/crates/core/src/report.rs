//! Fixed-width text tables for evaluation results and ablation grids.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::MetricsReport;

/// One model's accuracies on the shifted split and on the in-distribution split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub model: String,
    pub shifted: CategoryScores,
    pub in_distribution: CategoryScores,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryScores {
    pub overall: Option<f64>,
    pub yesno: Option<f64>,
    pub number: Option<f64>,
    pub other: Option<f64>,
}

impl CategoryScores {
    pub fn new(overall: f64, yesno: f64, number: f64, other: f64) -> Self {
        CategoryScores {
            overall: Some(overall),
            yesno: Some(yesno),
            number: Some(number),
            other: Some(other),
        }
    }
}

impl From<&MetricsReport> for CategoryScores {
    fn from(r: &MetricsReport) -> Self {
        CategoryScores {
            overall: Some(r.overall),
            yesno: r.yesno,
            number: r.number,
            other: r.other,
        }
    }
}

impl Table1Row {
    /// Builds a row from a shifted-split report and an optional in-distribution report.
    pub fn from_reports(model: &str, shifted: &MetricsReport, in_distribution: Option<&MetricsReport>) -> Self {
        let gap = match in_distribution {
            Some(id) => Some(id.overall - shifted.overall),
            None => shifted.gap,
        };
        Table1Row {
            model: model.to_string(),
            shifted: shifted.into(),
            in_distribution: in_distribution.map(CategoryScores::from).unwrap_or_default(),
            gap,
        }
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

fn block(s: &CategoryScores) -> String {
    format!(
        "{:>8} {:>8} {:>8} {:>8}",
        cell(s.overall),
        cell(s.yesno),
        cell(s.number),
        cell(s.other)
    )
}

/// Columns: model | shifted Overall Yes/No Number Other | in-distribution (same) | Gap.
pub fn render_table1(rows: &[Table1Row]) -> String {
    let w = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let group = format!("{:<35}", "shifted test");
    let group_id = format!("{:<35}", "in-distribution");
    writeln!(s, "{:<w$} | {group} | {group_id} | {:>6}", "", "").unwrap();
    let head = format!("{:>8} {:>8} {:>8} {:>8}", "Overall", "Yes/No", "Number", "Other");
    writeln!(s, "{:<w$} | {head} | {head} | {:>6}", "Model", "Gap").unwrap();
    writeln!(s, "{}-+-{}-+-{}-+-{}", "-".repeat(w), "-".repeat(35), "-".repeat(35), "-".repeat(6)).unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<w$} | {} | {} | {:>6}",
            r.model,
            block(&r.shifted),
            block(&r.in_distribution),
            cell(r.gap)
        )
        .unwrap();
    }
    s
}

/// One ablation row: model family, content-weight exponent, context-label flag, accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub model: String,
    pub r: Option<f64>,
    /// `Some(true)` = with context label, `Some(false)` = all-ones target.
    pub context_label: Option<bool>,
    pub accuracy: f64,
    /// Standard deviation across seeds, when more than one seed ran.
    pub std: Option<f64>,
}

/// Columns: model | (1-bias)^r | context label | Accuracy (± std when present).
pub fn render_table2(rows: &[Table2Row]) -> String {
    let with_std = rows.iter().any(|r| r.std.is_some());
    let acc_w = if with_std { 15 } else { 8 };
    let mut s = String::new();
    writeln!(
        s,
        "{:<6} | {:>10} | {:>13} | {:>acc_w$}",
        "Model", "(1-bias)^r", "context label", "Accuracy"
    )
    .unwrap();
    writeln!(s, "{}-+-{}-+-{}-+-{}", "-".repeat(6), "-".repeat(10), "-".repeat(13), "-".repeat(acc_w)).unwrap();
    for row in rows {
        let r = row.r.map_or_else(|| "-".to_string(), |r| format!("r={r}"));
        let label = match row.context_label {
            Some(true) => "w",
            Some(false) => "w/o",
            None => "-",
        };
        let acc = match row.std {
            Some(sd) => format!("{:.2} ± {:.2}", row.accuracy, sd),
            None => format!("{:.2}", row.accuracy),
        };
        writeln!(s, "{:<6} | {:>10} | {:>13} | {:>acc_w$}", row.model, r, label, acc).unwrap();
    }
    s
}
