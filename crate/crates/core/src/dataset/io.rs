//! Line-delimited JSON persistence for [`Split`].
//!
//! Line 1 is a header carrying the answer space, question-type table and
//! vocabulary; every following line is one instance record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{AnswerSpace, Category, Instance, QuestionType, QuestionTypeTable, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    split_name: String,
    answer_space: Vec<String>,
    qtype_table: Vec<QuestionType>,
    vocab: Vec<String>,
    regions: usize,
    region_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    schema_version: u32,
    split_name: String,
    qtype: usize,
    qtype_category: Category,
    question_tokens: Vec<usize>,
    /// `regions × region_dim`, row-major.
    image_features: Vec<f64>,
    /// Non-zero label entries keyed by answer index.
    labels: BTreeMap<usize, f64>,
}

pub fn save_split(split: &Split, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_split(split, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_split<W: Write>(split: &Split, out: &mut W) -> std::io::Result<()> {
    let (regions, region_dim) = split.feature_shape();
    let header = Header {
        schema_version: SCHEMA_VERSION,
        split_name: split.split_name.clone(),
        answer_space: split.answer_space.answers().to_vec(),
        qtype_table: split.qtype_table.types().to_vec(),
        vocab: split.vocab.clone(),
        regions,
        region_dim,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for inst in &split.instances {
        let record = Record {
            schema_version: SCHEMA_VERSION,
            split_name: split.split_name.clone(),
            qtype: inst.qtype,
            qtype_category: split.qtype_table.types()[inst.qtype].category,
            question_tokens: inst.question_tokens.clone(),
            image_features: inst.image_features.data.clone(),
            labels: inst
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &y)| y != 0.0)
                .map(|(j, &y)| (j, y))
                .collect(),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_split(BufReader::new(file), path)
}

/// Parses a split from any reader; `path` is only used in error messages.
pub fn read_split<R: BufRead>(reader: R, path: &Path) -> Result<Split> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => {
                return Err(Error::validation(
                    "instances",
                    format!("{}: empty dataset file", path.display()),
                ))
            }
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break parse_line(&line, i + 1, path)?;
            }
        }
    };

    let answer_space =
        AnswerSpace::new(header.answer_space).map_err(|e| parse_err(1, e.to_string()))?;
    let qtype_table =
        QuestionTypeTable::new(header.qtype_table).map_err(|e| parse_err(1, e.to_string()))?;

    let mut instances = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = parse_line(&line, lineno, path)?;
        if rec.split_name != header.split_name {
            return Err(parse_err(
                lineno,
                format!(
                    "split_name `{}` differs from header `{}`",
                    rec.split_name, header.split_name
                ),
            ));
        }
        let category = qtype_table
            .category_of(rec.qtype)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if category != rec.qtype_category {
            return Err(parse_err(
                lineno,
                format!(
                    "qtype_category `{}` contradicts table entry `{category}`",
                    rec.qtype_category
                ),
            ));
        }
        if rec.image_features.len() != header.regions * header.region_dim {
            return Err(parse_err(
                lineno,
                format!(
                    "image_features has {} values, expected {}x{}",
                    rec.image_features.len(),
                    header.regions,
                    header.region_dim
                ),
            ));
        }
        let mut labels = vec![0.0; answer_space.len()];
        for (j, y) in rec.labels {
            if j >= labels.len() {
                return Err(parse_err(lineno, format!("label index {j} out of range")));
            }
            labels[j] = y;
        }
        instances.push(Instance {
            image_features: Matrix::from_vec(header.regions, header.region_dim, rec.image_features),
            question_tokens: rec.question_tokens,
            qtype: rec.qtype,
            labels,
        });
    }

    Split::new(
        header.split_name,
        answer_space,
        qtype_table,
        header.vocab,
        instances,
    )
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, lineno: usize, path: &Path) -> Result<T> {
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: v as u32,
                expected: SCHEMA_VERSION,
            })
        }
        None => return Err(parse_err("missing field `schema_version`".into())),
    }
    serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
}
