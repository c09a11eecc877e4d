//! Desk-scale encoders and the three-branch classifier.
//!
//! ```text
//! tokens ──► f_q ──┬──────────────► fusion ─► h ─► C ─► z_base ─► (+ gate·log b) ─► z_cn ─┐
//! regions ─► f_v ◄─┘ (attention) ─┘                                                      ├─► z_p
//!              └──────────────► nn_q(f_q) ⊙ nn_v(f_v) ─► C_cx ─► z_cx ──────────────────┘
//! ```

mod config;
mod forward;
mod params;

pub use config::{EnsembleMode, FusionMode, InferenceBias, ModelConfig, ModelOptions};
pub use forward::{
    base_forward, content_forward, context_forward, encode_image, encode_question,
    joint_predict, BranchGrads, BranchOutputs, CcbModel, Head, Trace, BIAS_CLIP,
};
pub use params::{Parameters, ENCODER_PARAMS};
