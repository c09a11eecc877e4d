use serde::{Deserialize, Serialize};

use super::config::{EnsembleMode, FusionMode, InferenceBias, ModelConfig};
use super::params::Parameters;
use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::tensor::{add_assign, axpy, dot, sigmoid, softplus, Matrix};

/// Lower clip applied to bias entries before taking their log.
pub const BIAS_CLIP: f64 = 1e-8;

/// Raw (pre-sigmoid) scores of every head for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOutputs {
    pub z_base: Vec<f64>,
    pub z_cn: Vec<f64>,
    pub z_cx: Vec<f64>,
    pub z_p: Vec<f64>,
}

/// Loss gradients with respect to each head's scores for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrads {
    pub d_base: Vec<f64>,
    pub d_cn: Vec<f64>,
    pub d_cx: Vec<f64>,
    pub d_p: Vec<f64>,
}

impl BranchGrads {
    pub fn zeros(n_answers: usize) -> Self {
        BranchGrads {
            d_base: vec![0.0; n_answers],
            d_cn: vec![0.0; n_answers],
            d_cx: vec![0.0; n_answers],
            d_p: vec![0.0; n_answers],
        }
    }
}

/// Which head's scores are used as the answer prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Base,
    Content,
    Joint,
}

impl std::str::FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Head::Base),
            "content" => Ok(Head::Content),
            "joint" => Ok(Head::Joint),
            other => Err(Error::validation(
                "head",
                format!("`{other}` (expected base|content|joint)"),
            )),
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    mean_embed: Vec<f64>,
    pub fq: Vec<f64>,
    regions: Matrix,
    key: Vec<f64>,
    pub attention: Vec<f64>,
    pub fv: Vec<f64>,
    fuse_q: Vec<f64>,
    fuse_v: Vec<f64>,
    pub hidden: Vec<f64>,
    gate_pre: f64,
    pub gate: f64,
    /// `log(clip(b))` when the bias term was applied.
    log_bias: Option<Vec<f64>>,
    ctx_q: Vec<f64>,
    ctx_v: Vec<f64>,
    ctx_hidden: Vec<f64>,
    pub outputs: BranchOutputs,
}

/// Mean of token embeddings followed by `tanh(W ē + b)`.
pub fn encode_question(params: &Parameters, tokens: &[usize]) -> Result<Vec<f64>> {
    Ok(question_parts(params, tokens)?.1)
}

fn question_parts(params: &Parameters, tokens: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if tokens.is_empty() {
        return Err(Error::validation("question_tokens", "empty question"));
    }
    let vocab = params.embed.rows;
    let mut mean = vec![0.0; params.embed.cols];
    for &t in tokens {
        if t >= vocab {
            return Err(Error::validation(
                "question_tokens",
                format!("token id {t} outside vocabulary of {vocab}"),
            ));
        }
        add_assign(&mut mean, params.embed.row(t));
    }
    let inv = 1.0 / tokens.len() as f64;
    mean.iter_mut().for_each(|v| *v *= inv);
    let fq = affine_tanh(&params.q_w, &params.q_b, &mean);
    Ok((mean, fq))
}

/// Projects each region, attends over regions with a question-derived key and
/// returns the pooled vector together with the attention weights.
pub fn encode_image(
    params: &Parameters,
    features: &Matrix,
    fq: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, _, attention, fv) = image_parts(params, features, fq)?;
    Ok((fv, attention))
}

fn image_parts(
    params: &Parameters,
    features: &Matrix,
    fq: &[f64],
) -> Result<(Matrix, Vec<f64>, Vec<f64>, Vec<f64>)> {
    if features.rows == 0 {
        return Err(Error::validation("image_features", "no regions"));
    }
    if features.cols != params.v_w.cols {
        return Err(Error::validation(
            "image_features",
            format!("region width {} (expected {})", features.cols, params.v_w.cols),
        ));
    }
    check_len("fq", fq, params.att_w.cols)?;
    let d_v = params.v_w.rows;
    let mut regions = Matrix::zeros(features.rows, d_v);
    for r in 0..features.rows {
        let p = affine_tanh(&params.v_w, &params.v_b, features.row(r));
        regions.row_mut(r).copy_from_slice(&p);
    }
    let key = params.att_w.matvec(fq);
    let scale = 1.0 / (d_v as f64).sqrt();
    let scores: Vec<f64> = (0..regions.rows)
        .map(|r| dot(regions.row(r), &key) * scale)
        .collect();
    let attention = softmax(&scores);
    let mut fv = vec![0.0; d_v];
    for (r, &a) in attention.iter().enumerate() {
        axpy(a, regions.row(r), &mut fv);
    }
    Ok((regions, key, attention, fv))
}

/// `C(tanh(W_q f_q) ⊙ tanh(W_v f_v))`; returns the scores and the fused hidden vector.
pub fn base_forward(params: &Parameters, fq: &[f64], fv: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("fq", fq, params.fuse_q_w.cols)?;
    check_len("fv", fv, params.fuse_v_w.cols)?;
    let a = affine_tanh(&params.fuse_q_w, &params.fuse_q_b, fq);
    let c = affine_tanh(&params.fuse_v_w, &params.fuse_v_b, fv);
    let h: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x * y).collect();
    Ok((affine(&params.cls_w, &params.cls_b, &h), h))
}

/// Content-branch scores: base scores plus the (gated) log bias while training,
/// or whenever `inference_bias` is `keep`.
pub fn content_forward(
    params: &Parameters,
    z_base: &[f64],
    hidden: &[f64],
    b: Option<&[f64]>,
    training: bool,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    Ok(content_parts(params, z_base, hidden, b, training, config)?.0)
}

#[allow(clippy::type_complexity)]
fn content_parts(
    params: &Parameters,
    z_base: &[f64],
    hidden: &[f64],
    b: Option<&[f64]>,
    training: bool,
    config: &ModelConfig,
) -> Result<(Vec<f64>, f64, f64, Option<Vec<f64>>)> {
    let gate_pre = dot(params.gate_w.row(0), hidden) + params.gate_b.data[0];
    let gate = match config.ensemble_mode {
        EnsembleMode::LearnedMixin => softplus(gate_pre),
        EnsembleMode::FixedLogBias => 1.0,
    };
    let apply = training || config.inference_bias == InferenceBias::Keep;
    if !apply {
        return Ok((z_base.to_vec(), gate_pre, gate, None));
    }
    let b = b.ok_or_else(|| Error::validation("bias", "content branch needs a bias vector"))?;
    check_len("bias", b, z_base.len())?;
    let log_bias: Vec<f64> = b.iter().map(|&v| v.clamp(BIAS_CLIP, 1.0).ln()).collect();
    let z_cn = z_base
        .iter()
        .zip(&log_bias)
        .map(|(z, lb)| z + gate * lb)
        .collect();
    Ok((z_cn, gate_pre, gate, Some(log_bias)))
}

/// `C_cx(nn_q(f_q) ⊙ nn_v(f_v))` with its own projections.
pub fn context_forward(params: &Parameters, fq: &[f64], fv: &[f64]) -> Result<Vec<f64>> {
    Ok(context_parts(params, fq, fv)?.3)
}

#[allow(clippy::type_complexity)]
fn context_parts(
    params: &Parameters,
    fq: &[f64],
    fv: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_len("fq", fq, params.ctx_q_w.cols)?;
    check_len("fv", fv, params.ctx_v_w.cols)?;
    let cq = affine_tanh(&params.ctx_q_w, &params.ctx_q_b, fq);
    let cv = affine_tanh(&params.ctx_v_w, &params.ctx_v_b, fv);
    let hc: Vec<f64> = cq.iter().zip(&cv).map(|(x, y)| x * y).collect();
    let z = affine(&params.ctx_cls_w, &params.ctx_cls_b, &hc);
    Ok((cq, cv, hc, z))
}

pub fn joint_predict(z_cn: &[f64], z_cx: &[f64], mode: FusionMode) -> Result<Vec<f64>> {
    check_len("z_cx", z_cx, z_cn.len())?;
    Ok(match mode {
        FusionMode::Masked => z_cn.iter().zip(z_cx).map(|(c, x)| c * sigmoid(*x)).collect(),
        FusionMode::Literal => z_cn.iter().zip(z_cx).map(|(c, x)| c * x).collect(),
    })
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcbModel {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl CcbModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config);
        Ok(CcbModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(CcbModel { config, params })
    }

    /// Runs every branch. `bias` is required when the content branch applies it
    /// (always while training, at inference only with `inference_bias = keep`).
    pub fn forward(&self, inst: &Instance, bias: Option<&[f64]>, training: bool) -> Result<Trace> {
        let p = &self.params;
        let (mean_embed, fq) = question_parts(p, &inst.question_tokens)?;
        let (regions, key, attention, fv) = image_parts(p, &inst.image_features, &fq)?;
        let fuse_q = affine_tanh(&p.fuse_q_w, &p.fuse_q_b, &fq);
        let fuse_v = affine_tanh(&p.fuse_v_w, &p.fuse_v_b, &fv);
        let hidden: Vec<f64> = fuse_q.iter().zip(&fuse_v).map(|(x, y)| x * y).collect();
        let z_base = affine(&p.cls_w, &p.cls_b, &hidden);
        let (z_cn, gate_pre, gate, log_bias) =
            content_parts(p, &z_base, &hidden, bias, training, &self.config)?;
        let (ctx_q, ctx_v, ctx_hidden, z_cx) = context_parts(p, &fq, &fv)?;
        let z_p = joint_predict(&z_cn, &z_cx, self.config.fusion_mode)?;
        Ok(Trace {
            mean_embed,
            fq,
            regions,
            key,
            attention,
            fv,
            fuse_q,
            fuse_v,
            hidden,
            gate_pre,
            gate,
            log_bias,
            ctx_q,
            ctx_v,
            ctx_hidden,
            outputs: BranchOutputs {
                z_base,
                z_cn,
                z_cx,
                z_p,
            },
        })
    }

    /// Inference-mode scores of `head`.
    pub fn predict(&self, inst: &Instance, bias: Option<&[f64]>, head: Head) -> Result<Vec<f64>> {
        let out = self.forward(inst, bias, false)?.outputs;
        Ok(match head {
            Head::Base => out.z_base,
            Head::Content => out.z_cn,
            Head::Joint => out.z_p,
        })
    }

    /// Accumulates into `grads` the parameter gradient implied by the score
    /// gradients `g` for the instance that produced `trace`.
    pub fn backward(&self, inst: &Instance, trace: &Trace, g: &BranchGrads, grads: &mut Parameters) {
        let p = &self.params;
        let out = &trace.outputs;
        let mut d_cn = g.d_cn.clone();
        let mut d_cx = g.d_cx.clone();
        let mut d_base = g.d_base.clone();

        // joint prediction
        match self.config.fusion_mode {
            FusionMode::Masked => {
                for j in 0..d_cn.len() {
                    let s = sigmoid(out.z_cx[j]);
                    d_cn[j] += g.d_p[j] * s;
                    d_cx[j] += g.d_p[j] * out.z_cn[j] * s * (1.0 - s);
                }
            }
            FusionMode::Literal => {
                for j in 0..d_cn.len() {
                    d_cn[j] += g.d_p[j] * out.z_cx[j];
                    d_cx[j] += g.d_p[j] * out.z_cn[j];
                }
            }
        }

        // content ensemble
        add_assign(&mut d_base, &d_cn);
        let mut d_hidden = vec![0.0; trace.hidden.len()];
        if let (Some(lb), EnsembleMode::LearnedMixin) = (&trace.log_bias, self.config.ensemble_mode) {
            let d_gate = dot(&d_cn, lb);
            let d_gate_pre = d_gate * sigmoid(trace.gate_pre);
            axpy(d_gate_pre, &trace.hidden, grads.gate_w.row_mut(0));
            grads.gate_b.data[0] += d_gate_pre;
            axpy(d_gate_pre, p.gate_w.row(0), &mut d_hidden);
        }

        // base classifier and fusion
        grads.cls_w.add_outer(&d_base, &trace.hidden);
        add_assign(&mut grads.cls_b.data, &d_base);
        add_assign(&mut d_hidden, &p.cls_w.matvec_t(&d_base));
        let d_fuse_q = tanh_back(&trace.fuse_q, &mul(&d_hidden, &trace.fuse_v));
        let d_fuse_v = tanh_back(&trace.fuse_v, &mul(&d_hidden, &trace.fuse_q));
        grads.fuse_q_w.add_outer(&d_fuse_q, &trace.fq);
        add_assign(&mut grads.fuse_q_b.data, &d_fuse_q);
        grads.fuse_v_w.add_outer(&d_fuse_v, &trace.fv);
        add_assign(&mut grads.fuse_v_b.data, &d_fuse_v);
        let mut d_fq = p.fuse_q_w.matvec_t(&d_fuse_q);
        let mut d_fv = p.fuse_v_w.matvec_t(&d_fuse_v);

        // context branch
        grads.ctx_cls_w.add_outer(&d_cx, &trace.ctx_hidden);
        add_assign(&mut grads.ctx_cls_b.data, &d_cx);
        let d_hc = p.ctx_cls_w.matvec_t(&d_cx);
        let d_cq = tanh_back(&trace.ctx_q, &mul(&d_hc, &trace.ctx_v));
        let d_cv = tanh_back(&trace.ctx_v, &mul(&d_hc, &trace.ctx_q));
        grads.ctx_q_w.add_outer(&d_cq, &trace.fq);
        add_assign(&mut grads.ctx_q_b.data, &d_cq);
        grads.ctx_v_w.add_outer(&d_cv, &trace.fv);
        add_assign(&mut grads.ctx_v_b.data, &d_cv);
        if !self.config.detach_context_encoders {
            add_assign(&mut d_fq, &p.ctx_q_w.matvec_t(&d_cq));
            add_assign(&mut d_fv, &p.ctx_v_w.matvec_t(&d_cv));
        }

        // attention pooling
        let regions = &trace.regions;
        let scale = 1.0 / (regions.cols as f64).sqrt();
        let d_alpha: Vec<f64> = (0..regions.rows).map(|r| dot(regions.row(r), &d_fv)).collect();
        let mean_d: f64 = dot(&trace.attention, &d_alpha);
        let mut d_key = vec![0.0; trace.key.len()];
        for r in 0..regions.rows {
            let alpha = trace.attention[r];
            let d_score = alpha * (d_alpha[r] - mean_d);
            let mut d_region: Vec<f64> = d_fv.iter().map(|v| v * alpha).collect();
            axpy(d_score * scale, &trace.key, &mut d_region);
            axpy(d_score * scale, regions.row(r), &mut d_key);
            let d_pre = tanh_back(regions.row(r), &d_region);
            grads.v_w.add_outer(&d_pre, inst.image_features.row(r));
            add_assign(&mut grads.v_b.data, &d_pre);
        }
        grads.att_w.add_outer(&d_key, &trace.fq);
        add_assign(&mut d_fq, &p.att_w.matvec_t(&d_key));

        // question encoder
        let d_q_pre = tanh_back(&trace.fq, &d_fq);
        grads.q_w.add_outer(&d_q_pre, &trace.mean_embed);
        add_assign(&mut grads.q_b.data, &d_q_pre);
        let d_mean = p.q_w.matvec_t(&d_q_pre);
        let inv = 1.0 / inst.question_tokens.len() as f64;
        for &t in &inst.question_tokens {
            axpy(inv, &d_mean, grads.embed.row_mut(t));
        }
    }
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut y = w.matvec(x);
    add_assign(&mut y, &b.data);
    y
}

fn affine_tanh(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut y = affine(w, b, x);
    y.iter_mut().for_each(|v| *v = v.tanh());
    y
}

/// Gradient through `y = tanh(x)` given `y` and `dL/dy`.
fn tanh_back(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn check_len(field: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::validation(
            field,
            format!("length {} (expected {expected})", v.len()),
        ));
    }
    Ok(())
}
