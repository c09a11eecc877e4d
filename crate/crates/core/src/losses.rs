//! Multi-label binary cross-entropy and the composite content/context/predict objective.
//!
//! Every loss is a mean over instances of a sum over answers, evaluated from raw
//! scores through `softplus(z) - y z` so that no sigmoid is ever materialized.

use serde::{Deserialize, Serialize};

use crate::bias::{binarize, reweight_with, ReweightMode};
use crate::error::{Error, Result};
use crate::model::{BranchGrads, BranchOutputs};
use crate::tensor::{sigmoid, softplus};

/// What a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Content + context + joint-prediction losses.
    #[default]
    Ccb,
    /// Plain multi-label BCE on the base head.
    MlBaseline,
    /// Plain multi-label BCE on the bias-ensembled content head.
    LmhBaseline,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccb" => Ok(LossMode::Ccb),
            "ml_baseline" => Ok(LossMode::MlBaseline),
            "lmh_baseline" => Ok(LossMode::LmhBaseline),
            other => Err(Error::validation(
                "loss_mode",
                format!("`{other}` (expected ccb|ml_baseline|lmh_baseline)"),
            )),
        }
    }
}

/// Target used by the context loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLabel {
    /// Indicator of answers with non-zero prior for the question type.
    #[default]
    Binarized,
    /// Constant all-ones target.
    AllOnes,
}

impl std::str::FromStr for ContextLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binarized" => Ok(ContextLabel::Binarized),
            "all_ones" => Ok(ContextLabel::AllOnes),
            other => Err(Error::validation(
                "context_label",
                format!("`{other}` (expected binarized|all_ones)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub mode: LossMode,
    /// Exponent of the `(1 - b)^r` content weights.
    pub r: f64,
    pub reweight: ReweightMode,
    pub context_label: ContextLabel,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            mode: LossMode::Ccb,
            r: 1.0,
            reweight: ReweightMode::PerAnswer,
            context_label: ContextLabel::Binarized,
        }
    }
}

/// A single loss term, for requesting its gradient in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    /// Unweighted BCE on the base head.
    Ml,
    Content,
    Context,
    Predict,
    /// `Content + Context + Predict`.
    Ccb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mode: LossMode,
    pub l_ml: Option<f64>,
    pub l_cn: f64,
    pub l_cx: f64,
    pub l_p: f64,
    pub l_ccb: f64,
    pub batch_size: usize,
}

impl LossBreakdown {
    /// The scalar the run's `mode` minimizes.
    pub fn objective(&self) -> f64 {
        match self.mode {
            LossMode::Ccb => self.l_ccb,
            LossMode::MlBaseline | LossMode::LmhBaseline => self.l_ml.unwrap_or(f64::NAN),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_cn, self.l_cx, self.l_p, self.l_ccb, self.l_ml.unwrap_or(0.0)]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `Σ_j w_j [softplus(z_j) - y_j z_j]` for one instance.
fn instance_bce(z: &[f64], y: &[f64], w: Option<&[f64]>) -> f64 {
    z.iter()
        .zip(y)
        .enumerate()
        .map(|(j, (&z, &y))| {
            let term = softplus(z) - y * z;
            w.map_or(term, |w| w[j] * term)
        })
        .sum()
}

/// `dL/dz = w (σ(z) - y) * scale`, accumulated into `out`.
fn instance_bce_grad(z: &[f64], y: &[f64], w: Option<&[f64]>, scale: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let g = (sigmoid(z[j]) - y[j]) * scale;
        *o += w.map_or(g, |w| w[j] * g);
    }
}

fn check_batch(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::validation("batch", "empty batch"));
    }
    if scores.len() != labels.len() {
        return Err(Error::validation(
            "labels",
            format!("{} label rows for {} score rows", labels.len(), scores.len()),
        ));
    }
    for (i, (z, y)) in scores.iter().zip(labels).enumerate() {
        if z.len() != y.len() {
            return Err(Error::validation(
                "labels",
                format!("row {i}: {} labels for {} scores", y.len(), z.len()),
            ));
        }
        if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::validation("labels", format!("row {i}: entry outside [0, 1]")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("scores", format!("row {i}: non-finite score")));
        }
    }
    Ok(())
}

/// Mean over instances of the summed per-answer binary cross-entropy.
pub fn multilabel_bce(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    check_batch(scores, labels)?;
    let n = scores.len() as f64;
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(z, y)| instance_bce(z, y, None))
        .sum::<f64>()
        / n)
}

/// Gradient of [`multilabel_bce`] with respect to the scores.
pub fn multilabel_bce_grad(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_batch(scores, labels)?;
    let scale = 1.0 / scores.len() as f64;
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(z, y)| {
            let mut g = vec![0.0; z.len()];
            instance_bce_grad(z, y, None, scale, &mut g);
            g
        })
        .collect())
}

fn content_weights(biases: &[&[f64]], r: f64, mode: ReweightMode) -> Result<Vec<Vec<f64>>> {
    biases.iter().map(|b| reweight_with(b, r, mode)).collect()
}

/// BCE with each answer term of instance `i` scaled by `(1 - b_ij)^r`.
pub fn content_loss(
    z_cn: &[Vec<f64>],
    labels: &[Vec<f64>],
    biases: &[&[f64]],
    r: f64,
) -> Result<f64> {
    content_loss_with(z_cn, labels, biases, r, ReweightMode::PerAnswer)
}

pub fn content_loss_with(
    z_cn: &[Vec<f64>],
    labels: &[Vec<f64>],
    biases: &[&[f64]],
    r: f64,
    mode: ReweightMode,
) -> Result<f64> {
    check_batch(z_cn, labels)?;
    check_bias_rows(biases, z_cn)?;
    let w = content_weights(biases, r, mode)?;
    let n = z_cn.len() as f64;
    Ok(z_cn
        .iter()
        .zip(labels)
        .zip(&w)
        .map(|((z, y), w)| instance_bce(z, y, Some(w)))
        .sum::<f64>()
        / n)
}

/// BCE of the context scores against the binarized bias of each instance.
pub fn context_loss(z_cx: &[Vec<f64>], biases: &[&[f64]]) -> Result<f64> {
    check_bias_rows(biases, z_cx)?;
    let targets: Vec<Vec<f64>> = biases.iter().map(|b| binarize(b)).collect();
    multilabel_bce(z_cx, &targets)
}

pub fn predict_loss(z_p: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    multilabel_bce(z_p, labels)
}

fn check_bias_rows(biases: &[&[f64]], scores: &[Vec<f64>]) -> Result<()> {
    if biases.len() != scores.len() {
        return Err(Error::validation(
            "bias",
            format!("{} bias rows for {} score rows", biases.len(), scores.len()),
        ));
    }
    for (i, (b, z)) in biases.iter().zip(scores).enumerate() {
        if b.len() != z.len() || b.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::validation("bias", format!("row {i} is not a valid bias vector")));
        }
    }
    Ok(())
}

fn context_targets(biases: &[&[f64]], label: ContextLabel) -> Vec<Vec<f64>> {
    biases
        .iter()
        .map(|b| match label {
            ContextLabel::Binarized => binarize(b),
            ContextLabel::AllOnes => vec![1.0; b.len()],
        })
        .collect()
}

/// Evaluates every loss term on one batch of branch outputs.
pub fn ccb_loss(
    outputs: &[BranchOutputs],
    labels: &[Vec<f64>],
    biases: &[&[f64]],
    spec: &LossSpec,
) -> Result<LossBreakdown> {
    let (z_base, z_cn, z_cx, z_p) = unzip(outputs);
    check_batch(&z_base, labels)?;
    check_bias_rows(biases, &z_cn)?;
    let n = outputs.len();
    let mut b = LossBreakdown {
        mode: spec.mode,
        l_ml: None,
        l_cn: 0.0,
        l_cx: 0.0,
        l_p: 0.0,
        l_ccb: 0.0,
        batch_size: n,
    };
    match spec.mode {
        LossMode::Ccb => {
            b.l_cn = content_loss_with(&z_cn, labels, biases, spec.r, spec.reweight)?;
            b.l_cx = multilabel_bce(&z_cx, &context_targets(biases, spec.context_label))?;
            b.l_p = predict_loss(&z_p, labels)?;
            b.l_ccb = b.l_cn + b.l_cx + b.l_p;
        }
        LossMode::MlBaseline => b.l_ml = Some(multilabel_bce(&z_base, labels)?),
        LossMode::LmhBaseline => b.l_ml = Some(multilabel_bce(&z_cn, labels)?),
    }
    Ok(b)
}

/// Score gradients of the objective selected by `spec.mode`.
pub fn ccb_loss_grads(
    outputs: &[BranchOutputs],
    labels: &[Vec<f64>],
    biases: &[&[f64]],
    spec: &LossSpec,
) -> Result<Vec<BranchGrads>> {
    match spec.mode {
        LossMode::Ccb => term_grads(outputs, labels, biases, spec, LossTerm::Ccb),
        LossMode::MlBaseline => term_grads(outputs, labels, biases, spec, LossTerm::Ml),
        LossMode::LmhBaseline => {
            let plain = LossSpec { r: 0.0, ..*spec };
            term_grads(outputs, labels, biases, &plain, LossTerm::Content)
        }
    }
}

/// Score gradients of a single loss term (or the full sum for [`LossTerm::Ccb`]).
pub fn term_grads(
    outputs: &[BranchOutputs],
    labels: &[Vec<f64>],
    biases: &[&[f64]],
    spec: &LossSpec,
    term: LossTerm,
) -> Result<Vec<BranchGrads>> {
    let (z_base, z_cn, _, _) = unzip(outputs);
    check_batch(&z_base, labels)?;
    check_bias_rows(biases, &z_cn)?;
    let scale = 1.0 / outputs.len() as f64;
    let weights = content_weights(biases, spec.r, spec.reweight)?;
    let ctx = context_targets(biases, spec.context_label);
    let wants = |t: LossTerm| term == t || (term == LossTerm::Ccb && t != LossTerm::Ml);
    Ok(outputs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut g = BranchGrads::zeros(o.z_base.len());
            if wants(LossTerm::Ml) {
                instance_bce_grad(&o.z_base, &labels[i], None, scale, &mut g.d_base);
            }
            if wants(LossTerm::Content) {
                instance_bce_grad(&o.z_cn, &labels[i], Some(&weights[i]), scale, &mut g.d_cn);
            }
            if wants(LossTerm::Context) {
                instance_bce_grad(&o.z_cx, &ctx[i], None, scale, &mut g.d_cx);
            }
            if wants(LossTerm::Predict) {
                instance_bce_grad(&o.z_p, &labels[i], None, scale, &mut g.d_p);
            }
            g
        })
        .collect())
}

#[allow(clippy::type_complexity)]
fn unzip(outputs: &[BranchOutputs]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut a = Vec::with_capacity(outputs.len());
    let mut b = Vec::with_capacity(outputs.len());
    let mut c = Vec::with_capacity(outputs.len());
    let mut d = Vec::with_capacity(outputs.len());
    for o in outputs {
        a.push(o.z_base.clone());
        b.push(o.z_cn.clone());
        c.push(o.z_cx.clone());
        d.push(o.z_p.clone());
    }
    (a, b, c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{joint_predict, FusionMode};

    fn out(z_base: Vec<f64>, z_cn: Vec<f64>, z_cx: Vec<f64>) -> BranchOutputs {
        let z_p = joint_predict(&z_cn, &z_cx, FusionMode::Masked).unwrap();
        BranchOutputs {
            z_base,
            z_cn,
            z_cx,
            z_p,
        }
    }

    #[test]
    fn bce_at_zero_is_ln2() {
        let l = multilabel_bce(&[vec![0.0]], &[vec![1.0]]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_is_stationary_at_sigmoid_targets() {
        let z = vec![vec![-1.3, 0.2, 2.5]];
        let y = vec![z[0].iter().map(|&v| sigmoid(v)).collect::<Vec<_>>()];
        let g = multilabel_bce_grad(&z, &y).unwrap();
        assert!(g[0].iter().all(|v| v.abs() < 1e-16));
    }

    #[test]
    fn bce_is_stable_for_large_scores() {
        let l = multilabel_bce(&[vec![40.0]], &[vec![1.0]]).unwrap();
        assert!((0.0..1e-17).contains(&l));
        for z in [-1e3, -1e2, 1e2, 1e3] {
            for y in [0.0, 0.3, 1.0] {
                let l = multilabel_bce(&[vec![z]], &[vec![y]]).unwrap();
                assert!(l.is_finite());
            }
        }
    }

    #[test]
    fn bce_rejects_labels_outside_unit_interval() {
        assert!(matches!(
            multilabel_bce(&[vec![0.0]], &[vec![1.5]]),
            Err(Error::Validation { .. })
        ));
        assert!(multilabel_bce(&[], &[]).is_err());
    }

    #[test]
    fn content_loss_reductions() {
        let z = vec![vec![0.3, -1.2, 2.0], vec![1.1, 0.0, -0.4]];
        let y = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 1.0]];
        let b0 = [0.7, 0.3, 0.0];
        let b1 = [0.0, 0.5, 0.5];
        let biases: Vec<&[f64]> = vec![&b0, &b1];
        assert_eq!(
            content_loss(&z, &y, &biases, 0.0).unwrap(),
            multilabel_bce(&z, &y).unwrap()
        );
        let half = [0.5, 0.5, 0.5];
        let halves: Vec<&[f64]> = vec![&half, &half];
        let l = content_loss(&z, &y, &halves, 1.0).unwrap();
        assert!((l - 0.5 * multilabel_bce(&z, &y).unwrap()).abs() < 1e-15);
        assert!(content_loss(&z, &y, &halves, -0.5).is_err());
    }

    #[test]
    fn one_hot_bias_zeroes_its_term() {
        let z = vec![vec![-3.0, 0.5]];
        let y = vec![vec![1.0, 0.0]];
        let b = [1.0, 0.0];
        let l = content_loss(&z, &y, &[&b], 1.0).unwrap();
        let only_second = softplus(0.5);
        assert!((l - only_second).abs() < 1e-15);
    }

    #[test]
    fn context_loss_uses_binarized_targets() {
        let z = vec![vec![0.4, -0.2, 1.0]];
        let uniform = [1.0 / 3.0; 3];
        assert_eq!(
            context_loss(&z, &[&uniform]).unwrap(),
            multilabel_bce(&z, &[vec![1.0; 3]]).unwrap()
        );
        let sat = vec![vec![40.0; 3]];
        assert!(context_loss(&sat, &[&uniform]).unwrap() < 1e-16);
        let with_zero = [0.6, 0.4, 0.0];
        assert_eq!(
            context_loss(&z, &[&with_zero]).unwrap(),
            multilabel_bce(&z, &[vec![1.0, 1.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn breakdown_sums_exactly() {
        let outs = vec![
            out(vec![0.1, 0.2, 0.3], vec![0.5, -0.7, 1.5], vec![2.0, -1.0, 0.1]),
            out(vec![1.0, -2.0, 0.0], vec![-0.3, 0.9, 0.2], vec![-0.5, 0.4, 3.0]),
        ];
        let y = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.9, 0.3]];
        let b0 = [0.6, 0.4, 0.0];
        let b1 = [0.1, 0.1, 0.8];
        let biases: Vec<&[f64]> = vec![&b0, &b1];
        let spec = LossSpec::default();
        let br = ccb_loss(&outs, &y, &biases, &spec).unwrap();
        assert_eq!(br.l_ccb, br.l_cn + br.l_cx + br.l_p);
        assert!(br.l_cn >= 0.0 && br.l_cx >= 0.0 && br.l_p >= 0.0);
        assert_eq!(br.l_ml, None);
        assert_eq!(br.objective(), br.l_ccb);

        let z_p: Vec<Vec<f64>> = outs.iter().map(|o| o.z_p.clone()).collect();
        assert_eq!(br.l_p, multilabel_bce(&z_p, &y).unwrap());

        let ml = ccb_loss(&outs, &y, &biases, &LossSpec { mode: LossMode::MlBaseline, ..spec }).unwrap();
        assert_eq!((ml.l_cn, ml.l_cx, ml.l_p, ml.l_ccb), (0.0, 0.0, 0.0, 0.0));
        assert!(ml.l_ml.unwrap() > 0.0);
    }

    #[test]
    fn degenerate_spec_reduces_to_plain_bce_on_all_heads() {
        let outs = vec![out(vec![0.1, 0.2], vec![0.5, -0.7], vec![2.0, -1.0])];
        let y = vec![vec![0.0, 1.0]];
        let b = [0.5, 0.5];
        let spec = LossSpec {
            r: 0.0,
            context_label: ContextLabel::AllOnes,
            ..LossSpec::default()
        };
        let br = ccb_loss(&outs, &y, &[&b], &spec).unwrap();
        let z_cn = vec![outs[0].z_cn.clone()];
        let z_cx = vec![outs[0].z_cx.clone()];
        let z_p = vec![outs[0].z_p.clone()];
        assert_eq!(br.l_cn, multilabel_bce(&z_cn, &y).unwrap());
        assert_eq!(br.l_cx, multilabel_bce(&z_cx, &[vec![1.0, 1.0]]).unwrap());
        assert_eq!(br.l_p, multilabel_bce(&z_p, &y).unwrap());
    }

    #[test]
    fn saturated_mask_predict_loss_matches_content_bce() {
        let o = out(vec![0.0; 2], vec![0.8, -1.1], vec![800.0, 800.0]);
        let y = vec![vec![1.0, 0.0]];
        assert_eq!(
            predict_loss(std::slice::from_ref(&o.z_p), &y).unwrap(),
            multilabel_bce(std::slice::from_ref(&o.z_cn), &y).unwrap()
        );
    }
}
