//! Mini-batch training with a seeded shuffle, per-step loss history and checkpoints.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::{BiasTable, ReweightMode};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::losses::{ccb_loss, ccb_loss_grads, ContextLabel, LossMode, LossSpec};
use crate::model::{CcbModel, Head, ModelConfig, ModelOptions, Parameters};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const SHUFFLE_STREAM: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" | "adaptive-moment" => Ok(OptimizerKind::Adam),
            other => Err(Error::validation(
                "optimizer",
                format!("`{other}` (expected sgd|adam)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Exponent of the content-loss weights `(1 - b)^r`.
    pub r: f64,
    pub seed: u64,
    /// Record monitor-split accuracy every this many epochs (0 disables).
    pub eval_every: usize,
    pub loss_mode: LossMode,
    pub context_label: ContextLabel,
    pub reweight: ReweightMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 2e-3,
            optimizer: OptimizerKind::Adam,
            r: 1.0,
            seed: 0,
            eval_every: 0,
            loss_mode: LossMode::Ccb,
            context_label: ContextLabel::Binarized,
            reweight: ReweightMode::PerAnswer,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be finite and > 0"));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::validation("r", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            mode: self.loss_mode,
            r: self.r,
            reweight: self.reweight,
            context_label: self.context_label,
        }
    }

    /// Head whose scores count as the model's answer for this loss mode.
    pub fn prediction_head(&self) -> Head {
        match self.loss_mode {
            LossMode::Ccb => Head::Joint,
            LossMode::LmhBaseline => Head::Content,
            LossMode::MlBaseline => Head::Base,
        }
    }
}

/// One optimizer step's losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_ml: Option<f64>,
    pub l_cn: f64,
    pub l_cx: f64,
    pub l_p: f64,
    pub l_ccb: f64,
    /// Monitor-split overall accuracy, when evaluated after this step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub monitor_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// ChaCha word position, as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::validation("rng_state.word_pos", "not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: CcbModel,
    pub train_config: TrainConfig,
    pub bias_source_split: String,
    pub steps: usize,
    pub rng_state: RngState,
}

impl Checkpoint {
    pub fn prediction_head(&self) -> Head {
        self.train_config.prediction_head()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_SCHEMA_VERSION as u64) {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version.unwrap_or(0) as u32,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?;
        ckpt.model.params.check_shapes(&ckpt.model.config)?;
        Ok(ckpt)
    }
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRecord>,
}

enum Optimizer {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        t: i32,
        m: Parameters,
        v: Parameters,
    },
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: OptimizerKind, lr: f64, like: &Parameters) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                t: 0,
                m: like.zeros_like(),
                v: like.zeros_like(),
            },
        }
    }

    fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        match self {
            Optimizer::Sgd { lr } => params.add_scaled(-*lr, grads),
            Optimizer::Adam { lr, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - Self::BETA1.powi(*t);
                let c2 = 1.0 - Self::BETA2.powi(*t);
                let triples = params
                    .named_mut()
                    .into_iter()
                    .zip(grads.named())
                    .zip(m.named_mut().into_iter().zip(v.named_mut()));
                for (((_, p), (_, g)), ((_, m), (_, v))) in triples {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        m.data[i] = Self::BETA1 * m.data[i] + (1.0 - Self::BETA1) * gi;
                        v.data[i] = Self::BETA2 * v.data[i] + (1.0 - Self::BETA2) * gi * gi;
                        let m_hat = m.data[i] / c1;
                        let v_hat = v.data[i] / c2;
                        p.data[i] -= *lr * m_hat / (v_hat.sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}

/// Trains a fresh model on `train_split`. `bias_table` must come from that same split.
pub fn train(
    config: &TrainConfig,
    options: &ModelOptions,
    train_split: &Split,
    bias_table: &BiasTable,
) -> Result<TrainOutput> {
    train_monitored(config, options, train_split, bias_table, None)
}

/// As [`train`], additionally recording accuracy on `monitor` every `eval_every` epochs.
pub fn train_monitored(
    config: &TrainConfig,
    options: &ModelOptions,
    train_split: &Split,
    bias_table: &BiasTable,
    monitor: Option<&Split>,
) -> Result<TrainOutput> {
    config.validate()?;
    train_split.validate()?;
    if bias_table.source_split_name() != train_split.split_name {
        return Err(Error::validation(
            "bias_table",
            format!(
                "estimated from `{}`, but training on `{}`",
                bias_table.source_split_name(),
                train_split.split_name
            ),
        ));
    }
    if bias_table.n_answers() != train_split.answer_space.len()
        || bias_table.n_qtypes() != train_split.qtype_table.len()
    {
        return Err(Error::validation(
            "bias_table",
            "shape does not match the split's question types and answers",
        ));
    }
    let model_config = ModelConfig::for_split(train_split, options, config.seed);
    let mut model = CcbModel::new(model_config)?;
    let spec = config.loss_spec();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut history = Vec::new();
    let mut grads = model.params.zeros_like();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let instances: Vec<_> = batch.iter().map(|&i| &train_split.instances[i]).collect();
            let biases: Vec<&[f64]> = instances
                .iter()
                .map(|inst| bias_table.bias_for(inst.qtype))
                .collect::<Result<_>>()?;
            let traces = instances
                .iter()
                .zip(&biases)
                .map(|(inst, b)| model.forward(inst, Some(b), true))
                .collect::<Result<Vec<_>>>()?;
            let outputs: Vec<_> = traces.iter().map(|t| t.outputs.clone()).collect();
            let labels: Vec<Vec<f64>> = instances.iter().map(|i| i.labels.clone()).collect();

            let breakdown = ccb_loss(&outputs, &labels, &biases, &spec)
                .map_err(|e| diverged(step, e.to_string()))?;
            if !breakdown.is_finite() {
                return Err(diverged(step, format!("non-finite loss {breakdown:?}")));
            }
            let score_grads = ccb_loss_grads(&outputs, &labels, &biases, &spec)?;
            grads.fill(0.0);
            for ((inst, trace), g) in instances.iter().zip(&traces).zip(&score_grads) {
                model.backward(inst, trace, g, &mut grads);
            }
            optimizer.step(&mut model.params, &grads);
            if !model.params.is_finite() {
                return Err(diverged(step, "non-finite parameters after update".into()));
            }
            history.push(HistoryRecord {
                step,
                epoch,
                l_ml: breakdown.l_ml,
                l_cn: breakdown.l_cn,
                l_cx: breakdown.l_cx,
                l_p: breakdown.l_p,
                l_ccb: breakdown.l_ccb,
                monitor_accuracy: None,
            });
            step += 1;
        }
        if let Some(split) = monitor {
            if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
                let acc = crate::eval::accuracy(&model, split, Some(bias_table), config.prediction_head())?;
                if let Some(last) = history.last_mut() {
                    last.monitor_accuracy = Some(acc);
                }
            }
        }
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model,
            train_config: config.clone(),
            bias_source_split: bias_table.source_split_name().to_string(),
            steps: step,
            rng_state: RngState::capture(&rng),
        },
        history,
    })
}

fn diverged(step: usize, detail: String) -> Error {
    Error::Divergence { step, detail }
}

pub fn save_history(history: &[HistoryRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in history {
        serde_json::to_writer(&mut out, rec).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_history(path: impl AsRef<Path>) -> Result<Vec<HistoryRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
