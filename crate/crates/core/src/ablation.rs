//! Grid runner over the content-weight exponent and the context target, plus baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::estimate_bias;
use crate::dataset::{ShiftSpec, ToyGenerator};
use crate::error::Result;
use crate::eval::{evaluate, MetricsReport};
use crate::losses::{ContextLabel, LossMode};
use crate::model::ModelOptions;
use crate::report::Table2Row;
use crate::train::{train, TrainConfig};

/// Everything needed to generate data and train one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: ShiftSpec,
    pub model: ModelOptions,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub loss_mode: LossMode,
    /// Only meaningful for [`LossMode::Ccb`].
    pub r: f64,
    pub context_label: ContextLabel,
}

impl AblationCell {
    pub fn baseline(loss_mode: LossMode) -> Self {
        AblationCell {
            loss_mode,
            r: 0.0,
            context_label: ContextLabel::Binarized,
        }
    }

    pub fn ccb(r: f64, with_context_label: bool) -> Self {
        AblationCell {
            loss_mode: LossMode::Ccb,
            r,
            context_label: if with_context_label {
                ContextLabel::Binarized
            } else {
                ContextLabel::AllOnes
            },
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            loss_mode: self.loss_mode,
            r: self.r,
            context_label: self.context_label,
            ..base.clone()
        }
    }

    pub fn label(&self) -> String {
        match self.loss_mode {
            LossMode::MlBaseline => "ml_baseline".into(),
            LossMode::LmhBaseline => "lmh_baseline".into(),
            LossMode::Ccb => format!(
                "ccb r={} {}",
                self.r,
                match self.context_label {
                    ContextLabel::Binarized => "w",
                    ContextLabel::AllOnes => "w/o",
                }
            ),
        }
    }
}

/// The two baselines followed by `r ∈ {0, 0.5, 1, 2}` with and without the context label,
/// ordered as the ablation table lists them.
pub fn default_grid() -> Vec<AblationCell> {
    vec![
        AblationCell::baseline(LossMode::MlBaseline),
        AblationCell::baseline(LossMode::LmhBaseline),
        AblationCell::ccb(0.0, false),
        AblationCell::ccb(1.0, false),
        AblationCell::ccb(0.0, true),
        AblationCell::ccb(1.0, true),
        AblationCell::ccb(0.5, true),
        AblationCell::ccb(2.0, true),
        AblationCell::ccb(0.5, false),
        AblationCell::ccb(2.0, false),
    ]
}

/// Result of one (cell, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub seed: u64,
    /// Metrics on the prior-shifted test split, with `gap` filled in.
    pub shifted: MetricsReport,
    pub in_distribution_overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: AblationCell,
    pub runs: Vec<CellRun>,
}

impl CellResult {
    pub fn shifted_accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.shifted.overall).collect()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.shifted.gap.unwrap_or(f64::NAN)).collect()
    }

    pub fn mean_shifted(&self) -> f64 {
        mean(&self.shifted_accuracies())
    }

    pub fn mean_gap(&self) -> f64 {
        mean(&self.gaps())
    }

    pub fn table_row(&self) -> Table2Row {
        let acc = self.shifted_accuracies();
        let (model, r, label) = match self.cell.loss_mode {
            LossMode::MlBaseline => ("+None", None, None),
            LossMode::LmhBaseline => ("+LMH", None, None),
            LossMode::Ccb => (
                "+CCB",
                Some(self.cell.r),
                Some(self.cell.context_label == ContextLabel::Binarized),
            ),
        };
        Table2Row {
            model: model.to_string(),
            r,
            context_label: label,
            accuracy: mean(&acc),
            std: (acc.len() > 1).then(|| std_dev(&acc)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl AblationTable {
    pub fn find(&self, cell: &AblationCell) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.cell == cell)
    }

    pub fn rows(&self) -> Vec<Table2Row> {
        self.cells.iter().map(CellResult::table_row).collect()
    }

    pub fn render(&self) -> String {
        crate::report::render_table2(&self.rows())
    }
}

/// Trains and evaluates one cell on one seed. The seed drives both data
/// generation and model initialization.
pub fn run_cell(base: &ExperimentConfig, cell: &AblationCell, seed: u64) -> Result<CellRun> {
    let gen = ToyGenerator::new(ShiftSpec {
        seed,
        ..base.data.clone()
    })?;
    run_cell_on(base, cell, seed, &gen)
}

fn run_cell_on(
    base: &ExperimentConfig,
    cell: &AblationCell,
    seed: u64,
    gen: &ToyGenerator,
) -> Result<CellRun> {
    let train_split = gen.train_split();
    let bias = estimate_bias(&train_split)?;
    let config = TrainConfig {
        seed,
        ..cell.apply(&base.train)
    };
    let out = train(&config, &base.model, &train_split, &bias)?;
    let in_dist = evaluate(&out.checkpoint, &gen.val_split(), None)?;
    let shifted = evaluate(&out.checkpoint, &gen.test_split(), None)?.with_gap(&in_dist);
    Ok(CellRun {
        seed,
        in_distribution_overall: in_dist.overall,
        shifted,
    })
}

/// Runs every cell for every seed. Cells are independent and run in parallel;
/// results do not depend on scheduling.
pub fn run_ablation(base: &ExperimentConfig, grid: &[AblationCell], seeds: &[u64]) -> Result<AblationTable> {
    let generators = seeds
        .iter()
        .map(|&seed| {
            ToyGenerator::new(ShiftSpec {
                seed,
                ..base.data.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(c, s)| run_cell_on(base, &grid[c], seeds[s], &generators[s]))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = runs.into_iter();
    let cells = grid
        .iter()
        .map(|cell| CellResult {
            cell: *cell,
            runs: runs.by_ref().take(seeds.len()).collect(),
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        cells,
    })
}

/// Difference `a - b` of mean shifted accuracy, and whether `a` beats `b` on every seed.
pub fn paired_comparison(a: &CellResult, b: &CellResult) -> (f64, bool) {
    let diffs: Vec<f64> = a
        .shifted_accuracies()
        .iter()
        .zip(b.shifted_accuracies())
        .map(|(x, y)| x - y)
        .collect();
    (mean(&diffs), diffs.iter().all(|&d| d > 0.0))
}

/// Mean in-distribution minus shifted accuracy, as reported in each run.
pub fn mean_gap(runs: &[CellRun]) -> f64 {
    mean(&runs.iter().map(|r| r.in_distribution_overall - r.shifted.overall).collect::<Vec<_>>())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_ten_cells() {
        let g = default_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g.iter().filter(|c| c.loss_mode == LossMode::Ccb).count(), 8);
    }

    #[test]
    fn stats_helpers() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(std_dev(&[5.0]), 0.0);
    }
}
