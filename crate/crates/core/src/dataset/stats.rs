use std::collections::BTreeMap;

use serde::Serialize;

use super::types::{Category, Split};

/// Per-question-type histogram of the max-label answer, plus category counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    /// `histogram[qtype][answer]` = number of instances of `qtype` whose best answer is `answer`.
    pub histogram: Vec<Vec<usize>>,
    pub type_counts: Vec<usize>,
    pub category_counts: BTreeMap<Category, usize>,
}

impl DatasetStats {
    /// Answer with the largest count for `qtype`, if the type occurs at all.
    pub fn majority(&self, qtype: usize) -> Option<usize> {
        let row = &self.histogram[qtype];
        if self.type_counts[qtype] == 0 {
            return None;
        }
        let mut best = 0;
        for (j, &c) in row.iter().enumerate() {
            if c > row[best] {
                best = j;
            }
        }
        Some(best)
    }
}

pub fn dataset_stats(split: &Split) -> DatasetStats {
    let n_types = split.qtype_table.len();
    let mut histogram = vec![vec![0usize; split.answer_space.len()]; n_types];
    let mut type_counts = vec![0usize; n_types];
    let mut category_counts: BTreeMap<Category, usize> =
        Category::ALL.iter().map(|&c| (c, 0)).collect();
    for inst in &split.instances {
        histogram[inst.qtype][inst.best_answer()] += 1;
        type_counts[inst.qtype] += 1;
        *category_counts
            .entry(split.qtype_table.types()[inst.qtype].category)
            .or_default() += 1;
    }
    DatasetStats {
        histogram,
        type_counts,
        category_counts,
    }
}
