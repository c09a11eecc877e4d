#![allow(dead_code)]

use ccb_core::bias::{binarize, ReweightMode};
use ccb_core::dataset::{AnswerSpace, Category, Instance, QuestionType, QuestionTypeTable, Split};
use ccb_core::losses::{
    ccb_loss, content_loss_with, multilabel_bce, term_grads, ContextLabel, LossMode, LossSpec,
    LossTerm,
};
use ccb_core::model::{
    BranchOutputs, CcbModel, EnsembleMode, FusionMode, InferenceBias, ModelConfig, Parameters,
};
use ccb_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A tiny random model with a batch of hand-built instances and bias rows.
pub struct Problem {
    pub model: CcbModel,
    pub instances: Vec<Instance>,
    pub biases: Vec<Vec<f64>>,
    pub spec: LossSpec,
}

pub fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_answers = rng.random_range(2..=5);
    let vocab = rng.random_range(3..=7);
    let region_dim = rng.random_range(2..=5);
    let config = ModelConfig {
        vocab_size: vocab,
        region_dim,
        d_q: rng.random_range(2..=6),
        d_v: rng.random_range(2..=6),
        d_m: rng.random_range(2..=8),
        n_answers,
        ensemble_mode: if rng.random_bool(0.7) {
            EnsembleMode::LearnedMixin
        } else {
            EnsembleMode::FixedLogBias
        },
        fusion_mode: if rng.random_bool(0.6) {
            FusionMode::Masked
        } else {
            FusionMode::Literal
        },
        inference_bias: InferenceBias::Drop,
        detach_context_encoders: false,
        init_seed: seed,
    };
    let mut params = Parameters::init(&config);
    for (_, m) in params.named_mut() {
        for v in m.data.iter_mut() {
            *v += rng.random_range(-0.4..0.4);
        }
    }
    let model = CcbModel::from_parts(config, params).unwrap();

    let batch = rng.random_range(1..=4);
    let regions = rng.random_range(1..=3);
    let mut instances = Vec::new();
    let mut biases = Vec::new();
    for _ in 0..batch {
        let feats: Vec<f64> = (0..regions * region_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n_tok = rng.random_range(1..=4);
        let tokens = (0..n_tok).map(|_| rng.random_range(0..vocab)).collect();
        let mut labels = vec![0.0; n_answers];
        labels[rng.random_range(0..n_answers)] = 1.0;
        if rng.random_bool(0.5) {
            labels[rng.random_range(0..n_answers)] = 0.3;
        }
        instances.push(Instance {
            image_features: Matrix::from_vec(regions, region_dim, feats),
            question_tokens: tokens,
            qtype: 0,
            labels,
        });
        // random stochastic row, some entries exactly zero
        let mut b: Vec<f64> = (0..n_answers)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        if b.iter().all(|&v| v == 0.0) {
            b[0] = 1.0;
        }
        let s: f64 = b.iter().sum();
        b.iter_mut().for_each(|v| *v /= s);
        biases.push(b);
    }
    let spec = LossSpec {
        mode: LossMode::Ccb,
        r: [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)],
        reweight: if rng.random_bool(0.8) {
            ReweightMode::PerAnswer
        } else {
            ReweightMode::InstanceMax
        },
        context_label: ContextLabel::Binarized,
    };
    Problem {
        model,
        instances,
        biases,
        spec,
    }
}

impl Problem {
    fn bias_refs(&self) -> Vec<&[f64]> {
        self.biases.iter().map(Vec::as_slice).collect()
    }

    fn labels(&self) -> Vec<Vec<f64>> {
        self.instances.iter().map(|i| i.labels.clone()).collect()
    }

    fn outputs(&self, model: &CcbModel) -> Vec<BranchOutputs> {
        self.instances
            .iter()
            .zip(&self.biases)
            .map(|(inst, b)| model.forward(inst, Some(b), true).unwrap().outputs)
            .collect()
    }

    /// Loss value of `term`, computed directly from the loss functions.
    pub fn loss(&self, model: &CcbModel, term: LossTerm) -> f64 {
        let outs = self.outputs(model);
        let y = self.labels();
        let b = self.bias_refs();
        let col = |f: fn(&BranchOutputs) -> &Vec<f64>| outs.iter().map(|o| f(o).clone()).collect::<Vec<_>>();
        match term {
            LossTerm::Ml => multilabel_bce(&col(|o| &o.z_base), &y).unwrap(),
            LossTerm::Content => {
                content_loss_with(&col(|o| &o.z_cn), &y, &b, self.spec.r, self.spec.reweight).unwrap()
            }
            LossTerm::Context => {
                let t: Vec<Vec<f64>> = b.iter().map(|b| binarize(b)).collect();
                multilabel_bce(&col(|o| &o.z_cx), &t).unwrap()
            }
            LossTerm::Predict => multilabel_bce(&col(|o| &o.z_p), &y).unwrap(),
            LossTerm::Ccb => ccb_loss(&outs, &y, &b, &self.spec).unwrap().l_ccb,
        }
    }

    pub fn analytic(&self, term: LossTerm) -> Parameters {
        let y = self.labels();
        let b = self.bias_refs();
        let traces: Vec<_> = self
            .instances
            .iter()
            .zip(&self.biases)
            .map(|(inst, b)| self.model.forward(inst, Some(b), true).unwrap())
            .collect();
        let outs: Vec<_> = traces.iter().map(|t| t.outputs.clone()).collect();
        let g = term_grads(&outs, &y, &b, &self.spec, term).unwrap();
        let mut grads = self.model.params.zeros_like();
        for ((inst, t), g) in self.instances.iter().zip(&traces).zip(&g) {
            self.model.backward(inst, t, g, &mut grads);
        }
        grads
    }

    /// Central finite differences with step `h`, one parameter entry at a time.
    pub fn numeric(&self, term: LossTerm, h: f64) -> Parameters {
        let mut grads = self.model.params.zeros_like();
        let mut probe = self.model.clone();
        let names: Vec<&str> = grads.named().iter().map(|(n, _)| *n).collect();
        for (k, name) in names.iter().enumerate() {
            let len = self.model.params.get(name).unwrap().data.len();
            for i in 0..len {
                let orig = probe.params.named()[k].1.data[i];
                probe.params.named_mut()[k].1.data[i] = orig + h;
                let plus = self.loss(&probe, term);
                probe.params.named_mut()[k].1.data[i] = orig - h;
                let minus = self.loss(&probe, term);
                probe.params.named_mut()[k].1.data[i] = orig;
                grads.named_mut()[k].1.data[i] = (plus - minus) / (2.0 * h);
            }
        }
        grads
    }
}

/// Worst relative error over parameter tensors.
///
/// Per tensor: `‖a − n‖ / max(‖a‖, ‖n‖)`; per entry: `|a − n| / max(|a|, |n|, 1)`.
/// Tensors whose gradients are both (numerically) zero count as exact.
pub fn worst_relative_error(analytic: &Parameters, numeric: &Parameters) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ((name, a), (_, n)) in analytic.named().into_iter().zip(numeric.named()) {
        let diff: f64 = a.data.iter().zip(&n.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = n.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tensor_err = if na.max(nn) < 1e-10 { diff } else { diff / na.max(nn) };
        let entry_err = a
            .data
            .iter()
            .zip(&n.data)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max);
        let e = tensor_err.max(entry_err);
        if e > worst.0 {
            worst = (e, name.to_string());
        }
    }
    worst
}

/// A small random split with hard or soft labels; some types may be absent.
pub fn random_split(seed: u64, max_instances: usize, max_types: usize, max_answers: usize) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_types = rng.random_range(1..=max_types);
    let n_answers = rng.random_range(2..=max_answers);
    let answers = AnswerSpace::new((0..n_answers).map(|a| format!("a{a}")).collect()).unwrap();
    let types = QuestionTypeTable::new(
        (0..n_types)
            .map(|t| QuestionType {
                name: format!("t{t}"),
                category: Category::ALL[t % 3],
            })
            .collect(),
    )
    .unwrap();
    let n = rng.random_range(1..=max_instances);
    let instances = (0..n)
        .map(|_| {
            let mut labels = vec![0.0; n_answers];
            labels[rng.random_range(0..n_answers)] = 1.0;
            if rng.random_bool(0.4) {
                labels[rng.random_range(0..n_answers)] = [0.3, 0.6, 0.9][rng.random_range(0..3)];
            }
            Instance {
                image_features: Matrix::from_vec(1, 2, vec![0.0, 1.0]),
                question_tokens: vec![0],
                qtype: rng.random_range(0..n_types),
                labels,
            }
        })
        .collect();
    Split::new("train", answers, types, vec!["w".into()], instances).unwrap()
}

/// Frequency counter written independently of the library: one pass per cell.
pub fn brute_force_bias(split: &Split) -> Vec<Vec<f64>> {
    let n_answers = split.answer_space.len();
    (0..split.qtype_table.len())
        .map(|t| {
            let members: Vec<&Instance> = split.instances.iter().filter(|i| i.qtype == t).collect();
            let total: f64 = members.iter().flat_map(|i| i.labels.iter()).sum();
            (0..n_answers)
                .map(|a| {
                    if members.is_empty() {
                        1.0 / n_answers as f64
                    } else {
                        members.iter().map(|i| i.labels[a]).sum::<f64>() / total
                    }
                })
                .collect()
        })
        .collect()
}
