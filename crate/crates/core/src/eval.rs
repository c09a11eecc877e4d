//! Soft-credit accuracy, overall and per question category.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::BiasTable;
use crate::dataset::{Category, Split};
use crate::error::{Error, Result};
use crate::model::{CcbModel, Head, InferenceBias};
use crate::tensor::argmax;
use crate::train::Checkpoint;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub split_name: String,
    pub head: Head,
    /// Percentages in `[0, 100]`.
    pub overall: f64,
    pub yesno: Option<f64>,
    pub number: Option<f64>,
    pub other: Option<f64>,
    pub category_counts: BTreeMap<Category, usize>,
    /// In-distribution overall minus this split's overall, when a reference was supplied.
    pub gap: Option<f64>,
    pub n_evaluated: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn category(&self, c: Category) -> Option<f64> {
        match c {
            Category::YesNo => self.yesno,
            Category::Number => self.number,
            Category::Other => self.other,
        }
    }

    /// Records `in_distribution.overall - self.overall` as the gap.
    pub fn with_gap(mut self, in_distribution: &MetricsReport) -> Self {
        self.gap = Some(gap(in_distribution, &self));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// `overall(in-distribution) - overall(shifted)`; smaller means more robust.
pub fn gap(in_distribution: &MetricsReport, shifted: &MetricsReport) -> f64 {
    in_distribution.overall - shifted.overall
}

/// Per-instance credit `y[argmax(scores)]` for every instance of `split`.
pub fn instance_scores(
    model: &CcbModel,
    split: &Split,
    bias: Option<&BiasTable>,
    head: Head,
) -> Result<Vec<f64>> {
    model.config.check_split(split)?;
    let needs_bias = model.config.inference_bias == InferenceBias::Keep && head != Head::Base;
    if needs_bias && bias.is_none() {
        return Err(Error::validation(
            "bias",
            "model keeps the bias term at inference; a bias table is required",
        ));
    }
    if let Some(table) = bias {
        if table.source_split_name() == split.split_name {
            return Err(Error::Leakage {
                split: split.split_name.clone(),
            });
        }
        if table.n_answers() != split.answer_space.len() || table.n_qtypes() != split.qtype_table.len() {
            return Err(Error::validation("bias", "table shape does not match the split"));
        }
    }
    split
        .instances
        .par_iter()
        .map(|inst| {
            let b = match bias {
                Some(t) if needs_bias => Some(t.bias_for(inst.qtype)?),
                _ => None,
            };
            let scores = model.predict(inst, b, head)?;
            Ok(inst.labels[argmax(&scores)])
        })
        .collect()
}

/// Overall accuracy in percent.
pub fn accuracy(model: &CcbModel, split: &Split, bias: Option<&BiasTable>, head: Head) -> Result<f64> {
    let credit = instance_scores(model, split, bias, head)?;
    Ok(100.0 * credit.iter().sum::<f64>() / credit.len() as f64)
}

/// Evaluates a checkpoint with its default prediction head.
pub fn evaluate(checkpoint: &Checkpoint, split: &Split, bias: Option<&BiasTable>) -> Result<MetricsReport> {
    evaluate_head(checkpoint, split, bias, checkpoint.prediction_head())
}

pub fn evaluate_head(
    checkpoint: &Checkpoint,
    split: &Split,
    bias: Option<&BiasTable>,
    head: Head,
) -> Result<MetricsReport> {
    let credit = instance_scores(&checkpoint.model, split, bias, head)?;
    let categories: Vec<Category> = split
        .instances
        .iter()
        .map(|inst| split.qtype_table.types()[inst.qtype].category)
        .collect();
    let config = serde_json::json!({
        "model": checkpoint.model.config,
        "train": checkpoint.train_config,
    });
    Ok(summarize(&credit, &categories, &split.split_name, head, config))
}

/// Aggregates per-instance credit (in `[0, 1]`) into a report.
pub fn summarize(
    credit: &[f64],
    categories: &[Category],
    split_name: &str,
    head: Head,
    config: serde_json::Value,
) -> MetricsReport {
    let mut sums: BTreeMap<Category, f64> = BTreeMap::new();
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for (&s, &c) in credit.iter().zip(categories) {
        *sums.entry(c).or_default() += s;
        *counts.entry(c).or_default() += 1;
    }
    let pct = |c: Category| {
        let n = counts[&c];
        (n > 0).then(|| 100.0 * sums[&c] / n as f64)
    };
    MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        split_name: split_name.to_string(),
        head,
        overall: 100.0 * credit.iter().sum::<f64>() / credit.len().max(1) as f64,
        yesno: pct(Category::YesNo),
        number: pct(Category::Number),
        other: pct(Category::Other),
        category_counts: counts,
        gap: None,
        n_evaluated: credit.len(),
        config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_average_to_overall() {
        let credit = [1.0, 0.0, 0.3, 1.0, 0.6, 0.0, 1.0];
        let cats = [
            Category::YesNo,
            Category::YesNo,
            Category::Other,
            Category::Number,
            Category::Other,
            Category::Other,
            Category::YesNo,
        ];
        let r = summarize(&credit, &cats, "test", Head::Joint, serde_json::Value::Null);
        let weighted: f64 = Category::ALL
            .iter()
            .filter_map(|&c| r.category(c).map(|a| a * r.category_counts[&c] as f64))
            .sum::<f64>()
            / r.n_evaluated as f64;
        assert!((weighted - r.overall).abs() < 1e-9);
        assert!((r.yesno.unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.number, Some(100.0));
    }

    #[test]
    fn missing_category_is_none() {
        let r = summarize(&[1.0], &[Category::Other], "x", Head::Base, serde_json::Value::Null);
        assert_eq!(r.yesno, None);
        assert_eq!(r.other, Some(100.0));
        assert_eq!(r.overall, 100.0);
    }

    #[test]
    fn gap_is_in_distribution_minus_shifted() {
        let id = summarize(&[1.0, 1.0], &[Category::Other; 2], "val", Head::Joint, serde_json::Value::Null);
        let sh = summarize(&[1.0, 0.0], &[Category::Other; 2], "test", Head::Joint, serde_json::Value::Null);
        assert_eq!(sh.with_gap(&id).gap, Some(50.0));
    }
}
