use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

macro_rules! parameters {
    ($($(#[$doc:meta])* $name:ident),+ $(,)?) => {
        /// All trainable tensors. Bias vectors are stored as `1 × n` matrices.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct Parameters {
            $($(#[$doc])* pub $name: Matrix,)+
        }

        impl Parameters {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),+];

            pub fn named(&self) -> Vec<(&'static str, &Matrix)> {
                vec![$((stringify!($name), &self.$name)),+]
            }

            pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
                vec![$((stringify!($name), &mut self.$name)),+]
            }
        }
    };
}

parameters! {
    /// `vocab × d_q` token embeddings.
    embed,
    q_w, q_b,
    /// Region projection, `d_v × region_dim`.
    v_w, v_b,
    /// Question-to-key map for region attention, `d_v × d_q`.
    att_w,
    fuse_q_w, fuse_q_b, fuse_v_w, fuse_v_b,
    cls_w, cls_b,
    /// Learned-mixin gate over the fused hidden vector.
    gate_w, gate_b,
    ctx_q_w, ctx_q_b, ctx_v_w, ctx_v_b,
    ctx_cls_w, ctx_cls_b,
}

/// Parameters shared by the base and context branches; detaching the context
/// branch stops its gradients here.
pub const ENCODER_PARAMS: &[&str] = &["embed", "q_w", "q_b", "v_w", "v_b", "att_w"];

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        Parameters {
            embed: Matrix::zeros(c.vocab_size, c.d_q),
            q_w: Matrix::zeros(c.d_q, c.d_q),
            q_b: Matrix::zeros(1, c.d_q),
            v_w: Matrix::zeros(c.d_v, c.region_dim),
            v_b: Matrix::zeros(1, c.d_v),
            att_w: Matrix::zeros(c.d_v, c.d_q),
            fuse_q_w: Matrix::zeros(c.d_m, c.d_q),
            fuse_q_b: Matrix::zeros(1, c.d_m),
            fuse_v_w: Matrix::zeros(c.d_m, c.d_v),
            fuse_v_b: Matrix::zeros(1, c.d_m),
            cls_w: Matrix::zeros(c.n_answers, c.d_m),
            cls_b: Matrix::zeros(1, c.n_answers),
            gate_w: Matrix::zeros(1, c.d_m),
            gate_b: Matrix::zeros(1, 1),
            ctx_q_w: Matrix::zeros(c.d_m, c.d_q),
            ctx_q_b: Matrix::zeros(1, c.d_m),
            ctx_v_w: Matrix::zeros(c.d_m, c.d_v),
            ctx_v_b: Matrix::zeros(1, c.d_m),
            ctx_cls_w: Matrix::zeros(c.n_answers, c.d_m),
            ctx_cls_b: Matrix::zeros(1, c.n_answers),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut p = Parameters::zeros(config);
        for (_, m) in p.named_mut() {
            if m.rows == 1 {
                continue;
            }
            let a = (6.0 / (m.rows + m.cols) as f64).sqrt();
            for v in m.data.iter_mut() {
                *v = rng.random_range(-a..a);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, v: f64) {
        for (_, m) in self.named_mut() {
            m.fill(v);
        }
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Parameters) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            crate::tensor::axpy(alpha, &b.data, &mut a.data);
        }
    }

    /// Checks every tensor against the shapes `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Parameters::zeros(config);
        for ((name, got), (_, want)) in self.named().into_iter().zip(expected.named()) {
            if got.rows != want.rows || got.cols != want.cols || got.data.len() != want.data.len() {
                return Err(Error::validation(
                    name,
                    format!(
                        "shape {}x{} (expected {}x{})",
                        got.rows, got.cols, want.rows, want.cols
                    ),
                ));
            }
        }
        Ok(())
    }
}
