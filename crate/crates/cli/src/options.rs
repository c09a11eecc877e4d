//! Flag groups that override the matching sections of an experiment config file.

use std::path::{Path, PathBuf};

use anyhow::Result;
use ccb_core::ablation::ExperimentConfig;
use ccb_core::bias::ReweightMode;
use ccb_core::dataset::{ShiftMode, ShiftSpec};
use ccb_core::losses::{ContextLabel, LossMode};
use ccb_core::model::{EnsembleMode, FusionMode, InferenceBias, ModelOptions};
use ccb_core::train::{OptimizerKind, TrainConfig};
use clap::Args;

use crate::manifest::Table1Source;
use crate::usage;

macro_rules! override_fields {
    ($src:expr, $dst:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })+
    };
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_qtypes: Option<usize>,
    #[arg(long)]
    pub n_answers_per_type: Option<usize>,
    /// Mass of the training majority answer per question type.
    #[arg(long)]
    pub skew: Option<f64>,
    /// inverted | uniform
    #[arg(long)]
    pub shift_mode: Option<ShiftMode>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub region_dim: Option<usize>,
    #[arg(long)]
    pub n_objects: Option<usize>,
    #[arg(long)]
    pub n_filler_words: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub soft_labels: Option<bool>,
}

impl DataArgs {
    pub fn apply(&self, spec: &mut ShiftSpec) {
        override_fields!(self, spec;
            n_train, n_test, n_val, n_qtypes, n_answers_per_type, skew, shift_mode,
            regions, region_dim, n_objects, n_filler_words, noise, soft_labels);
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_q: Option<usize>,
    #[arg(long)]
    pub d_v: Option<usize>,
    #[arg(long)]
    pub d_m: Option<usize>,
    /// learned_mixin | fixed_log_bias
    #[arg(long)]
    pub ensemble_mode: Option<EnsembleMode>,
    /// masked | literal
    #[arg(long)]
    pub fusion_mode: Option<FusionMode>,
    /// drop | keep
    #[arg(long)]
    pub inference_bias: Option<InferenceBias>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub detach_context_encoders: Option<bool>,
}

impl ModelArgs {
    pub fn apply(&self, opts: &mut ModelOptions) {
        override_fields!(self, opts;
            d_q, d_v, d_m, ensemble_mode, fusion_mode, inference_bias, detach_context_encoders);
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// sgd | adam
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Exponent of the (1 - bias)^r content weights.
    #[arg(long)]
    pub r: Option<f64>,
    /// ccb | ml_baseline | lmh_baseline
    #[arg(long = "loss")]
    pub loss_mode: Option<LossMode>,
    /// binarized | all_ones
    #[arg(long)]
    pub context_label: Option<ContextLabel>,
    /// per_answer | instance_max
    #[arg(long)]
    pub reweight: Option<ReweightMode>,
}

impl TrainArgs {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        override_fields!(self, cfg;
            epochs, batch_size, learning_rate, optimizer, r, loss_mode, context_label, reweight);
        cfg.validate()?;
        Ok(())
    }
}

/// Reads an experiment config from TOML (default) or JSON (`.json` extension).
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Parses `NAME=SHIFTED[,IN_DISTRIBUTION]`.
pub fn parse_row(spec: &str) -> Result<Table1Source> {
    let (name, files) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--row `{spec}`: expected NAME=SHIFTED[,IN_DISTRIBUTION]")))?;
    let mut parts = files.split(',');
    let shifted = PathBuf::from(parts.next().unwrap_or_default());
    let in_distribution = parts.next().map(PathBuf::from);
    if name.is_empty() || shifted.as_os_str().is_empty() || parts.next().is_some() {
        return Err(usage(format!("--row `{spec}`: expected NAME=SHIFTED[,IN_DISTRIBUTION]")));
    }
    Ok(Table1Source {
        model: name.to_string(),
        shifted,
        in_distribution,
    })
}
