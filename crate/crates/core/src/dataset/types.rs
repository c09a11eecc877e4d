use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Ordered candidate answers. The position of an answer is its id everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSpace {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerSpace {
    pub fn new(answers: Vec<String>) -> Result<Self> {
        if answers.len() < 2 {
            return Err(Error::validation(
                "answer_space",
                format!("needs at least 2 answers, got {}", answers.len()),
            ));
        }
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::validation(
                    "answer_space",
                    format!("duplicate answer `{a}`"),
                ));
            }
        }
        Ok(AnswerSpace { answers, index })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.answers.get(id).map(String::as_str)
    }

    pub fn id_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    YesNo,
    Number,
    Other,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::YesNo, Category::Number, Category::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::YesNo => "yesno",
            Category::Number => "number",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionType {
    pub name: String,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTypeTable {
    types: Vec<QuestionType>,
}

impl QuestionTypeTable {
    pub fn new(types: Vec<QuestionType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::validation(
                "qtype_table",
                "needs at least one question type",
            ));
        }
        Ok(QuestionTypeTable { types })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[QuestionType] {
        &self.types
    }

    pub fn category_of(&self, qtype: usize) -> Result<Category> {
        self.types
            .get(qtype)
            .map(|t| t.category)
            .ok_or_else(|| Error::Lookup {
                kind: "qtype",
                key: qtype.to_string(),
            })
    }
}

/// One training example: region features, question tokens, question type and graded answer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// `regions × region_dim`, row-major.
    pub image_features: Matrix,
    pub question_tokens: Vec<usize>,
    pub qtype: usize,
    /// Dense label vector over the answer space, entries in `[0, 1]`.
    pub labels: Vec<f64>,
}

impl Instance {
    /// Index of the highest-scoring label (lowest index on ties).
    pub fn best_answer(&self) -> usize {
        crate::tensor::argmax(&self.labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub split_name: String,
    pub answer_space: AnswerSpace,
    pub qtype_table: QuestionTypeTable,
    /// Token vocabulary; token ids index into it.
    pub vocab: Vec<String>,
    pub instances: Vec<Instance>,
}

impl Split {
    pub fn new(
        split_name: impl Into<String>,
        answer_space: AnswerSpace,
        qtype_table: QuestionTypeTable,
        vocab: Vec<String>,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        let split = Split {
            split_name: split_name.into(),
            answer_space,
            qtype_table,
            vocab,
            instances,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// `(regions, region_dim)` of the image features, taken from the first instance.
    pub fn feature_shape(&self) -> (usize, usize) {
        let f = &self.instances[0].image_features;
        (f.rows, f.cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.split_name.is_empty() {
            return Err(Error::validation("split_name", "must not be empty"));
        }
        if self.instances.is_empty() {
            return Err(Error::validation(
                "instances",
                format!("split `{}` is empty", self.split_name),
            ));
        }
        let (regions, dim) = self.feature_shape();
        for (i, inst) in self.instances.iter().enumerate() {
            validate_instance(self, i, inst, regions, dim)?;
        }
        Ok(())
    }
}

fn validate_instance(
    split: &Split,
    i: usize,
    inst: &Instance,
    regions: usize,
    dim: usize,
) -> Result<()> {
    let field = |name: &str| format!("instances[{i}].{name}");
    if inst.qtype >= split.qtype_table.len() {
        return Err(Error::validation(
            field("qtype"),
            format!("{} is not a known question type", inst.qtype),
        ));
    }
    if inst.labels.len() != split.answer_space.len() {
        return Err(Error::validation(
            field("labels"),
            format!(
                "length {} does not match answer space size {}",
                inst.labels.len(),
                split.answer_space.len()
            ),
        ));
    }
    if inst.labels.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::validation(field("labels"), "entries must lie in [0, 1]"));
    }
    if !inst.labels.iter().any(|&y| y > 0.0) {
        return Err(Error::validation(field("labels"), "no positive entry"));
    }
    let f = &inst.image_features;
    if f.rows == 0 || f.rows != regions || f.cols != dim {
        return Err(Error::validation(
            field("image_features"),
            format!("shape {}x{} (expected {regions}x{dim})", f.rows, f.cols),
        ));
    }
    if !f.is_finite() {
        return Err(Error::validation(field("image_features"), "non-finite entry"));
    }
    if inst.question_tokens.is_empty() {
        return Err(Error::validation(field("question_tokens"), "empty question"));
    }
    if let Some(&t) = inst
        .question_tokens
        .iter()
        .find(|&&t| t >= split.vocab.len())
    {
        return Err(Error::validation(
            field("question_tokens"),
            format!("token id {t} outside vocabulary of {}", split.vocab.len()),
        ));
    }
    Ok(())
}
