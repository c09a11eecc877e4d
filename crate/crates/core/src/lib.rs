//! Debiased multi-label answer classification on a toy VQA-style benchmark.
//!
//! A base question/image classifier is extended with two heads: a content head
//! that absorbs the per-question-type answer prior through a learned log-bias
//! ensemble and down-weights prior-dominated answers in its loss, and a context
//! head trained to recognise which answers are plausible for the question type.
//! The joint prediction multiplies the two.

pub mod ablation;
pub mod bias;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
