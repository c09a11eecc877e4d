//! Answer prior per question type, and the two ways it is turned into training signal:
//! a binary plausibility label and per-answer loss weights.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};

/// Entries at or below this are treated as zero when binarizing.
pub const POSITIVE_THRESHOLD: f64 = 1e-12;

pub const BIAS_SCHEMA_VERSION: u32 = 1;

/// Row-stochastic `n_qtypes × n_answers` matrix of `P(answer | question type)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    rows: Vec<Vec<f64>>,
    source_split_name: String,
    smoothing_epsilon: f64,
}

impl BiasTable {
    /// Builds a table from explicit rows, checking row-stochasticity.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        source_split_name: impl Into<String>,
        smoothing_epsilon: f64,
    ) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 {
            return Err(Error::validation("bias_table", "empty table"));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::validation(
                    "bias_table",
                    format!("row {t} has {} entries, expected {width}", row.len()),
                ));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::validation(
                    "bias_table",
                    format!("row {t} has entries outside [0, 1]"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(
                    "bias_table",
                    format!("row {t} sums to {sum}"),
                ));
            }
        }
        Ok(BiasTable {
            rows,
            source_split_name: source_split_name.into(),
            smoothing_epsilon,
        })
    }

    pub fn n_qtypes(&self) -> usize {
        self.rows.len()
    }

    pub fn n_answers(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn source_split_name(&self) -> &str {
        &self.source_split_name
    }

    pub fn smoothing_epsilon(&self) -> f64 {
        self.smoothing_epsilon
    }

    /// Bias vector for an instance of question type `qtype`.
    pub fn bias_for(&self, qtype: usize) -> Result<&[f64]> {
        self.rows
            .get(qtype)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup {
                kind: "qtype",
                key: qtype.to_string(),
            })
    }

    /// Text form: a versioned header, then one whitespace-separated row per question type.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# bias-table schema_version={} source={} smoothing={:e} qtypes={} answers={}",
            BIAS_SCHEMA_VERSION,
            self.source_split_name,
            self.smoothing_epsilon,
            self.n_qtypes(),
            self.n_answers()
        )
        .unwrap();
        for (t, row) in self.rows.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for v in row {
                write!(s, " {v:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::validation("bias_table", "empty file"))?;
        let fields: std::collections::HashMap<&str, &str> = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let version: u32 = fields
            .get("schema_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(1, "missing schema_version".into()))?;
        if version != BIAS_SCHEMA_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: BIAS_SCHEMA_VERSION,
            });
        }
        let source = fields
            .get("source")
            .ok_or_else(|| parse_err(1, "missing source".into()))?
            .to_string();
        let smoothing: f64 = fields
            .get("smoothing")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(1, "missing smoothing".into()))?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let mut parts = line.split_whitespace();
            let t: usize = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| parse_err(lineno, "missing qtype id".into()))?;
            if t != rows.len() {
                return Err(parse_err(lineno, format!("expected qtype {}, got {t}", rows.len())));
            }
            let row = parts
                .map(|p| p.parse::<f64>().map_err(|e| parse_err(lineno, e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        BiasTable::from_rows(rows, source, smoothing)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Estimates `P(answer | question type)` by summing label mass per type.
/// Types with no instances get the uniform row.
pub fn estimate_bias(train: &Split) -> Result<BiasTable> {
    estimate_bias_smoothed(train, 0.0)
}

/// As [`estimate_bias`], with `epsilon` added to every count before normalizing.
pub fn estimate_bias_smoothed(train: &Split, epsilon: f64) -> Result<BiasTable> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::validation("smoothing_epsilon", "must be finite and >= 0"));
    }
    train.validate()?;
    let n_answers = train.answer_space.len();
    let mut mass = vec![vec![0.0; n_answers]; train.qtype_table.len()];
    for inst in &train.instances {
        for (m, y) in mass[inst.qtype].iter_mut().zip(&inst.labels) {
            *m += y;
        }
    }
    let rows = mass
        .into_iter()
        .map(|mut row| {
            row.iter_mut().for_each(|m| *m += epsilon);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|m| *m /= total);
                row
            } else {
                vec![1.0 / n_answers as f64; n_answers]
            }
        })
        .collect();
    BiasTable::from_rows(rows, train.split_name.clone(), epsilon)
}

/// Indicator of `b_j > 0` (with [`POSITIVE_THRESHOLD`] absorbing float noise).
pub fn binarize(b: &[f64]) -> Vec<f64> {
    b.iter()
        .map(|&v| if v > POSITIVE_THRESHOLD { 1.0 } else { 0.0 })
        .collect()
}

/// How the bias vector turns into loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightMode {
    /// `(1 - b_j)^r` separately for each answer.
    #[default]
    PerAnswer,
    /// `(1 - max_j b_j)^r` shared by all answers of the instance.
    InstanceMax,
}

impl std::str::FromStr for ReweightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_answer" => Ok(ReweightMode::PerAnswer),
            "instance_max" => Ok(ReweightMode::InstanceMax),
            other => Err(Error::validation(
                "reweight",
                format!("`{other}` (expected per_answer|instance_max)"),
            )),
        }
    }
}

/// Per-answer weights `(1 - b_j)^r`, clipped at 0.
pub fn reweight(b: &[f64], r: f64) -> Result<Vec<f64>> {
    reweight_with(b, r, ReweightMode::PerAnswer)
}

pub fn reweight_with(b: &[f64], r: f64, mode: ReweightMode) -> Result<Vec<f64>> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::validation("r", format!("{r} must be finite and >= 0")));
    }
    let w = |v: f64| (1.0 - v).max(0.0).powf(r);
    Ok(match mode {
        ReweightMode::PerAnswer => b.iter().map(|&v| w(v)).collect(),
        ReweightMode::InstanceMax => {
            let m = b.iter().copied().fold(0.0, f64::max);
            vec![w(m); b.len()]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_toy_dataset, Instance, ShiftSpec};

    fn base_split() -> Split {
        generate_toy_dataset(&ShiftSpec {
            n_train: 4,
            n_test: 1,
            n_val: 1,
            n_qtypes: 3,
            n_answers_per_type: 2,
            skew: 0.5,
            region_dim: 16,
            regions: 2,
            n_objects: 3,
            seed: 11,
            ..ShiftSpec::default()
        })
        .unwrap()
        .0
    }

    fn with_labels(split: &Split, items: &[(usize, usize)]) -> Split {
        let a = split.answer_space.len();
        let proto = &split.instances[0];
        let mut s = split.clone();
        s.instances = items
            .iter()
            .map(|&(t, j)| {
                let mut labels = vec![0.0; a];
                labels[j] = 1.0;
                Instance {
                    qtype: t,
                    labels,
                    ..proto.clone()
                }
            })
            .collect();
        s
    }

    #[test]
    fn counts_two_to_one() {
        let split = with_labels(&base_split(), &[(1, 2), (1, 2), (1, 3), (0, 0)]);
        let table = estimate_bias(&split).unwrap();
        let row = table.bias_for(1).unwrap();
        assert_eq!(row, &[0.0, 0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        assert_eq!(table.bias_for(0).unwrap()[0], 1.0);
        // type 2 never occurs
        assert!(table.bias_for(2).unwrap().iter().all(|&v| v == 1.0 / 6.0));
        assert!(matches!(table.bias_for(3), Err(Error::Lookup { .. })));
        assert_eq!(table.source_split_name(), "train");
    }

    #[test]
    fn soft_labels_accumulate_mass() {
        let mut split = with_labels(&base_split(), &[(0, 0)]);
        split.instances[0].labels[1] = 0.3;
        let table = estimate_bias(&split).unwrap();
        let row = table.bias_for(0).unwrap();
        assert!((row[0] - 1.0 / 1.3).abs() < 1e-15);
        assert!((row[1] - 0.3 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn smoothing_spreads_mass() {
        let split = with_labels(&base_split(), &[(0, 0)]);
        let table = estimate_bias_smoothed(&split, 1.0).unwrap();
        let row = table.bias_for(0).unwrap();
        assert!((row[0] - 2.0 / 7.0).abs() < 1e-15);
        assert!(row.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.7, 0.3, 0.0]), vec![1.0, 1.0, 0.0]);
        assert_eq!(binarize(&[0.0; 4]), vec![0.0; 4]);
        assert_eq!(binarize(&[0.25; 4]), vec![1.0; 4]);
        assert_eq!(binarize(&[1e-13, 2e-12]), vec![0.0, 1.0]);
    }

    #[test]
    fn reweight_examples() {
        assert_eq!(reweight(&[0.3, 1.0, 0.0], 0.0).unwrap(), vec![1.0; 3]);
        assert_eq!(reweight(&[1.0, 0.2], 1.5).unwrap()[0], 0.0);
        assert_eq!(reweight(&[0.5], 2.0).unwrap(), vec![0.25]);
        assert!(matches!(reweight(&[0.5], -1.0), Err(Error::Validation { .. })));
        assert_eq!(
            reweight_with(&[0.5, 0.25, 0.25], 1.0, ReweightMode::InstanceMax).unwrap(),
            vec![0.5; 3]
        );
    }

    #[test]
    fn text_round_trip() {
        let split = with_labels(&base_split(), &[(1, 2), (1, 2), (1, 3), (0, 0)]);
        let table = estimate_bias(&split).unwrap();
        let back = BiasTable::from_text(&table.to_text(), Path::new("b.txt")).unwrap();
        assert_eq!(back, table);
        let bumped = table.to_text().replace("schema_version=1", "schema_version=9");
        assert!(matches!(
            BiasTable::from_text(&bumped, Path::new("b.txt")),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn from_rows_rejects_non_stochastic() {
        assert!(BiasTable::from_rows(vec![vec![0.5, 0.4]], "train", 0.0).is_err());
        assert!(BiasTable::from_rows(vec![vec![1.2, -0.2]], "train", 0.0).is_err());
    }
}
