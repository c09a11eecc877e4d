//! Synthetic VQA-like data with a per-question-type answer prior that changes
//! between the training split and the shifted test split.
//!
//! Every image carries one "signal" region: the code of the question's object
//! plus the code of the true answer. Distractor regions show other objects with
//! other answers of the same question type, so a model has to match the
//! question object to a region to read the answer off the image.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{AnswerSpace, Category, Instance, QuestionType, QuestionTypeTable, Split};
use crate::error::{Error, Result};
use crate::tensor::{argmax, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    /// The test majority answer of each type is a different answer than in training.
    Inverted,
    /// Test answers are uniform within each type.
    Uniform,
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverted" => Ok(ShiftMode::Inverted),
            "uniform" => Ok(ShiftMode::Uniform),
            other => Err(Error::validation(
                "shift_mode",
                format!("`{other}` (expected inverted|uniform)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub n_train: usize,
    pub n_test: usize,
    /// Size of the held-out split drawn with the training prior.
    pub n_val: usize,
    pub n_qtypes: usize,
    pub n_answers_per_type: usize,
    /// Probability mass of the training majority answer within its type.
    pub skew: f64,
    pub shift_mode: ShiftMode,
    pub regions: usize,
    pub region_dim: usize,
    pub n_objects: usize,
    pub n_filler_words: usize,
    /// Half-width of the uniform noise added to every feature entry.
    pub noise: f64,
    /// Emit graded labels from {0.3, 0.6, 0.9, 1.0} instead of one-hot.
    pub soft_labels: bool,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            n_train: 5000,
            n_test: 1000,
            n_val: 1000,
            n_qtypes: 8,
            n_answers_per_type: 4,
            skew: 0.9,
            shift_mode: ShiftMode::Inverted,
            regions: 4,
            region_dim: 48,
            n_objects: 8,
            n_filler_words: 8,
            noise: 0.05,
            soft_labels: false,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn n_answers(&self) -> usize {
        self.n_qtypes * self.n_answers_per_type
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_val", self.n_val),
            ("n_qtypes", self.n_qtypes),
            ("regions", self.regions),
            ("region_dim", self.region_dim),
            ("n_objects", self.n_objects),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be > 0"));
            }
        }
        if self.n_answers_per_type < 2 {
            return Err(Error::validation("n_answers_per_type", "must be >= 2"));
        }
        let k = self.n_answers_per_type as f64;
        if !(self.skew.is_finite() && self.skew >= 1.0 / k - 1e-12 && self.skew <= 1.0) {
            return Err(Error::validation(
                "skew",
                format!("{} outside [1/{}, 1]", self.skew, self.n_answers_per_type),
            ));
        }
        if self.regions > self.n_objects {
            return Err(Error::validation(
                "regions",
                format!(
                    "{} regions need as many distinct objects (n_objects = {})",
                    self.regions, self.n_objects
                ),
            ));
        }
        let codes = self.n_objects + self.n_answers();
        if self.region_dim < codes {
            return Err(Error::validation(
                "region_dim",
                format!("{} is too small for {codes} orthogonal codes", self.region_dim),
            ));
        }
        // |code · noise| <= noise * sqrt(d) keeps the signal region decodable.
        if !(self.noise >= 0.0 && self.noise * (self.region_dim as f64).sqrt() < 0.5) {
            return Err(Error::validation(
                "noise",
                format!(
                    "{} must satisfy 0 <= noise * sqrt(region_dim) < 0.5",
                    self.noise
                ),
            ));
        }
        Ok(())
    }
}

const YESNO_TYPES: &[&str] = &["is the", "are there", "does the", "is this", "can you"];
const NUMBER_TYPES: &[&str] = &["how many", "what number is", "how many people are"];
const OTHER_TYPES: &[&str] = &[
    "what color is",
    "what is the",
    "what kind of",
    "where is the",
    "what sport is",
];
const OBJECTS: &[&str] = &[
    "banana", "dog", "counter", "bus", "shirt", "clock", "kite", "table", "cup", "horse", "tree",
    "car",
];
const FILLERS: &[&str] = &[
    "a", "in", "on", "of", "picture", "image", "photo", "this", "that", "near", "here", "there",
];

const STREAM_CODEBOOK: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_VAL: u64 = 3;

/// Which answer prior a split is sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prior {
    Train,
    Shifted,
}

/// Holds everything derived from a [`ShiftSpec`] that is shared across splits:
/// vocabulary, answer space, question types, codebook and per-type priors.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    spec: ShiftSpec,
    answer_space: AnswerSpace,
    qtype_table: QuestionTypeTable,
    vocab: Vec<String>,
    type_tokens: Vec<Vec<usize>>,
    object_tokens: Vec<usize>,
    filler_tokens: Vec<usize>,
    object_codes: Vec<Vec<f64>>,
    answer_codes: Vec<Vec<f64>>,
    train_majority: Vec<usize>,
    test_majority: Vec<usize>,
}

impl ToyGenerator {
    pub fn new(spec: ShiftSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.n_answers_per_type;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(STREAM_CODEBOOK);

        let mut types = Vec::with_capacity(spec.n_qtypes);
        for t in 0..spec.n_qtypes {
            let category = Category::ALL[t % 3];
            let pool = match category {
                Category::YesNo => YESNO_TYPES,
                Category::Number => NUMBER_TYPES,
                Category::Other => OTHER_TYPES,
            };
            let slot = t / 3;
            let name = match pool.get(slot) {
                Some(n) => n.to_string(),
                None => format!("{} {}", pool[slot % pool.len()], slot / pool.len()),
            };
            types.push(QuestionType { name, category });
        }

        let mut vocab: Vec<String> = Vec::new();
        let intern = |w: &str, vocab: &mut Vec<String>| -> usize {
            match vocab.iter().position(|v| v == w) {
                Some(i) => i,
                None => {
                    vocab.push(w.to_string());
                    vocab.len() - 1
                }
            }
        };
        let type_tokens: Vec<Vec<usize>> = types
            .iter()
            .map(|t| t.name.split(' ').map(|w| intern(w, &mut vocab)).collect())
            .collect();
        let object_tokens: Vec<usize> = (0..spec.n_objects)
            .map(|o| intern(&numbered(OBJECTS, o), &mut vocab))
            .collect();
        let filler_tokens: Vec<usize> = (0..spec.n_filler_words)
            .map(|f| intern(&numbered(FILLERS, f), &mut vocab))
            .collect();

        let answers = types
            .iter()
            .flat_map(|t| {
                let slug = t.name.replace(' ', "_");
                (0..k).map(move |j| format!("{slug}#{j}"))
            })
            .collect();
        let answer_space = AnswerSpace::new(answers)?;
        let qtype_table = QuestionTypeTable::new(types)?;

        let codes = orthonormal_codes(&mut rng, spec.region_dim, spec.n_objects + spec.n_answers());
        let (object_codes, answer_codes) = {
            let mut it = codes.into_iter();
            let objects: Vec<_> = it.by_ref().take(spec.n_objects).collect();
            (objects, it.collect::<Vec<_>>())
        };

        let train_majority: Vec<usize> = (0..spec.n_qtypes).map(|_| rng.random_range(0..k)).collect();
        let test_majority = train_majority.iter().map(|&m| (m + 1) % k).collect();

        Ok(ToyGenerator {
            spec,
            answer_space,
            qtype_table,
            vocab,
            type_tokens,
            object_tokens,
            filler_tokens,
            object_codes,
            answer_codes,
            train_majority,
            test_majority,
        })
    }

    pub fn spec(&self) -> &ShiftSpec {
        &self.spec
    }

    pub fn answer_space(&self) -> &AnswerSpace {
        &self.answer_space
    }

    /// Global answer id of the training majority answer for each question type.
    pub fn train_majority(&self) -> Vec<usize> {
        self.train_majority
            .iter()
            .enumerate()
            .map(|(t, &m)| t * self.spec.n_answers_per_type + m)
            .collect()
    }

    /// Answer distribution (over the whole answer space) a split draws from for type `qtype`.
    pub fn prior(&self, qtype: usize, shifted: bool) -> Vec<f64> {
        let k = self.spec.n_answers_per_type;
        let mut p = vec![0.0; self.answer_space.len()];
        let local = if shifted {
            match self.spec.shift_mode {
                ShiftMode::Uniform => vec![1.0 / k as f64; k],
                ShiftMode::Inverted => peaked(k, self.test_majority[qtype], self.spec.skew),
            }
        } else {
            peaked(k, self.train_majority[qtype], self.spec.skew)
        };
        p[qtype * k..(qtype + 1) * k].copy_from_slice(&local);
        p
    }

    pub fn train_split(&self) -> Split {
        self.sample_split("train", self.spec.n_train, STREAM_TRAIN, Prior::Train)
    }

    pub fn test_split(&self) -> Split {
        self.sample_split("test", self.spec.n_test, STREAM_TEST, Prior::Shifted)
    }

    /// Held-out split drawn with the training prior, for in-distribution accuracy.
    pub fn val_split(&self) -> Split {
        self.sample_split("val", self.spec.n_val, STREAM_VAL, Prior::Train)
    }

    /// Reads the answer back out of the image: finds the region carrying the
    /// question's object and returns the answer whose code it matches best.
    pub fn decode_answer(&self, inst: &Instance) -> Option<usize> {
        let object = inst
            .question_tokens
            .iter()
            .find_map(|t| self.object_tokens.iter().position(|o| o == t))?;
        let feats = &inst.image_features;
        let region = (0..feats.rows)
            .map(|r| dot(feats.row(r), &self.object_codes[object]))
            .collect::<Vec<_>>();
        let row = feats.row(argmax(&region));
        let scores: Vec<f64> = self.answer_codes.iter().map(|c| dot(row, c)).collect();
        Some(argmax(&scores))
    }

    fn sample_split(&self, name: &str, n: usize, stream: u64, prior: Prior) -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream);
        let priors: Vec<WeightedIndex<f64>> = (0..self.spec.n_qtypes)
            .map(|t| {
                let k = self.spec.n_answers_per_type;
                let p = self.prior(t, prior == Prior::Shifted);
                WeightedIndex::new(&p[t * k..(t + 1) * k]).expect("prior has positive mass")
            })
            .collect();
        let instances = (0..n)
            .map(|_| self.sample_instance(&mut rng, &priors))
            .collect();
        Split::new(
            name,
            self.answer_space.clone(),
            self.qtype_table.clone(),
            self.vocab.clone(),
            instances,
        )
        .expect("generator emits valid splits")
    }

    fn sample_instance(&self, rng: &mut ChaCha8Rng, priors: &[WeightedIndex<f64>]) -> Instance {
        let spec = &self.spec;
        let k = spec.n_answers_per_type;
        let qtype = rng.random_range(0..spec.n_qtypes);
        let local = priors[qtype].sample(rng);
        let answer = qtype * k + local;

        let objects = sample(rng, spec.n_objects, spec.regions).into_vec();
        let signal_region = rng.random_range(0..spec.regions);
        let question_object = objects[signal_region];

        let mut features = Matrix::zeros(spec.regions, spec.region_dim);
        for (r, &obj) in objects.iter().enumerate() {
            let shown = if r == signal_region {
                answer
            } else {
                qtype * k + rng.random_range(0..k)
            };
            let row = features.row_mut(r);
            for (d, v) in row.iter_mut().enumerate() {
                *v = self.object_codes[obj][d] + self.answer_codes[shown][d];
                if spec.noise > 0.0 {
                    *v += rng.random_range(-spec.noise..=spec.noise);
                }
            }
        }

        let mut tokens = self.type_tokens[qtype].clone();
        tokens.push(self.object_tokens[question_object]);
        if !self.filler_tokens.is_empty() {
            for _ in 0..rng.random_range(0..=2) {
                tokens.push(self.filler_tokens[rng.random_range(0..self.filler_tokens.len())]);
            }
        }

        let mut labels = vec![0.0; self.answer_space.len()];
        if spec.soft_labels {
            labels[answer] = if rng.random_bool(0.5) { 1.0 } else { 0.9 };
            if rng.random_bool(0.5) {
                let other = (local + rng.random_range(1..k)) % k;
                labels[qtype * k + other] = if rng.random_bool(0.5) { 0.6 } else { 0.3 };
            }
        } else {
            labels[answer] = 1.0;
        }

        Instance {
            image_features: features,
            question_tokens: tokens,
            qtype,
            labels,
        }
    }
}

/// Generates the training split and the prior-shifted test split for `spec`.
pub fn generate_toy_dataset(spec: &ShiftSpec) -> Result<(Split, Split)> {
    let gen = ToyGenerator::new(spec.clone())?;
    Ok((gen.train_split(), gen.test_split()))
}

fn peaked(k: usize, majority: usize, skew: f64) -> Vec<f64> {
    let rest = (1.0 - skew) / (k - 1) as f64;
    (0..k).map(|j| if j == majority { skew } else { rest }).collect()
}

fn numbered(pool: &[&str], i: usize) -> String {
    if i < pool.len() {
        pool[i].to_string()
    } else {
        format!("{}{}", pool[i % pool.len()], i / pool.len())
    }
}

/// `n` orthonormal vectors in `R^dim` from the QR factor of a Gaussian matrix.
fn orthonormal_codes(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
    let gaussian = DMatrix::<f64>::from_fn(dim, n, |_, _| StandardNormal.sample(rng));
    let q = gaussian.qr().q();
    (0..n).map(|c| q.column(c).iter().copied().collect()).collect()
}
