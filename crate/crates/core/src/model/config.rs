use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};

/// How the bias prior is mixed into the content branch during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// `z_base + softplus(g(h)) * log(b)` with a learned scalar gate `g`.
    #[default]
    LearnedMixin,
    /// `z_base + log(b)`.
    FixedLogBias,
}

/// How content and context scores are combined into the joint prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `z_cn * sigmoid(z_cx)`: context acts as a plausibility mask.
    #[default]
    Masked,
    /// `z_cn * z_cx` on raw scores.
    Literal,
}

/// Whether the bias term stays in the content branch outside training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceBias {
    #[default]
    Drop,
    Keep,
}

macro_rules! parse_enum {
    ($ty:ty, $field:literal, { $($s:literal => $v:expr),+ $(,)? }) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::validation(
                        $field,
                        format!("`{other}` (expected one of: {})", [$($s),+].join(", ")),
                    )),
                }
            }
        }
    };
}

parse_enum!(EnsembleMode, "ensemble_mode", {
    "learned_mixin" => EnsembleMode::LearnedMixin,
    "fixed_log_bias" => EnsembleMode::FixedLogBias,
});
parse_enum!(FusionMode, "fusion_mode", {
    "masked" => FusionMode::Masked,
    "literal" => FusionMode::Literal,
});
parse_enum!(InferenceBias, "inference_bias", {
    "drop" => InferenceBias::Drop,
    "keep" => InferenceBias::Keep,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width of one raw image region vector.
    pub region_dim: usize,
    pub d_q: usize,
    pub d_v: usize,
    pub d_m: usize,
    pub n_answers: usize,
    pub ensemble_mode: EnsembleMode,
    pub fusion_mode: FusionMode,
    pub inference_bias: InferenceBias,
    pub detach_context_encoders: bool,
    pub init_seed: u64,
}

/// Hidden sizes and branch modes; combined with a split's shapes into a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub d_q: usize,
    pub d_v: usize,
    pub d_m: usize,
    pub ensemble_mode: EnsembleMode,
    pub fusion_mode: FusionMode,
    pub inference_bias: InferenceBias,
    pub detach_context_encoders: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            d_q: 32,
            d_v: 32,
            d_m: 64,
            ensemble_mode: EnsembleMode::default(),
            fusion_mode: FusionMode::default(),
            inference_bias: InferenceBias::default(),
            detach_context_encoders: true,
        }
    }
}

impl ModelConfig {
    pub fn for_split(split: &Split, options: &ModelOptions, init_seed: u64) -> Self {
        ModelConfig {
            vocab_size: split.vocab.len(),
            region_dim: split.feature_shape().1,
            d_q: options.d_q,
            d_v: options.d_v,
            d_m: options.d_m,
            n_answers: split.answer_space.len(),
            ensemble_mode: options.ensemble_mode,
            fusion_mode: options.fusion_mode,
            inference_bias: options.inference_bias,
            detach_context_encoders: options.detach_context_encoders,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("region_dim", self.region_dim),
            ("d_q", self.d_q),
            ("d_v", self.d_v),
            ("d_m", self.d_m),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "must be > 0"));
            }
        }
        if self.n_answers < 2 {
            return Err(Error::validation("n_answers", "must be >= 2"));
        }
        Ok(())
    }

    /// Checks that a split's shapes match this configuration.
    pub fn check_split(&self, split: &Split) -> Result<()> {
        if split.answer_space.len() != self.n_answers {
            return Err(Error::validation(
                "answer_space",
                format!(
                    "split has {} answers, model expects {}",
                    split.answer_space.len(),
                    self.n_answers
                ),
            ));
        }
        if split.vocab.len() != self.vocab_size {
            return Err(Error::validation(
                "vocab",
                format!(
                    "split vocabulary has {} tokens, model expects {}",
                    split.vocab.len(),
                    self.vocab_size
                ),
            ));
        }
        if split.feature_shape().1 != self.region_dim {
            return Err(Error::validation(
                "region_dim",
                format!(
                    "split regions have width {}, model expects {}",
                    split.feature_shape().1,
                    self.region_dim
                ),
            ));
        }
        Ok(())
    }
}
