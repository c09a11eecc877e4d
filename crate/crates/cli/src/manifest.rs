use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ccb_core::ablation::ExperimentConfig;
use ccb_core::dataset::ShiftSpec;
use ccb_core::model::{Head, ModelOptions};
use ccb_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// A file the run read or wrote, with its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileRecord {
            path: std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One row of a rendered results table: a shifted-split metrics file and an
/// optional in-distribution metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Source {
    pub model: String,
    pub shifted: PathBuf,
    pub in_distribution: Option<PathBuf>,
}

/// Fully resolved inputs of a command; enough to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    GenData {
        data: ShiftSpec,
    },
    Train {
        train_split: PathBuf,
        model: ModelOptions,
        train: TrainConfig,
        smoothing_epsilon: f64,
    },
    Eval {
        checkpoint: PathBuf,
        split: PathBuf,
        bias: Option<PathBuf>,
        reference: Option<PathBuf>,
        head: Option<Head>,
    },
    Ablate {
        config: ExperimentConfig,
        seeds: Vec<u64>,
    },
    Report {
        table1: Vec<Table1Source>,
        table2: Option<PathBuf>,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::GenData { .. } => "gen-data",
            Invocation::Train { .. } => "train",
            Invocation::Eval { .. } => "eval",
            Invocation::Ablate { .. } => "ablate",
            Invocation::Report { .. } => "report",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::GenData { data } => Some(data.seed),
            Invocation::Train { train, .. } => Some(train.seed),
            Invocation::Ablate { seeds, .. } => seeds.first().copied(),
            Invocation::Eval { .. } | Invocation::Report { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// Command line as typed.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub invocation: Invocation,
    /// Input files by role.
    pub inputs: BTreeMap<String, FileRecord>,
    /// Output files by role.
    pub outputs: BTreeMap<String, FileRecord>,
}

impl RunManifest {
    pub fn new(invocation: Invocation) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv: std::env::args().collect(),
            seed: invocation.seed(),
            invocation,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: impl Into<String>, path: &Path) -> Result<()> {
        self.inputs.insert(role.into(), FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, role: impl Into<String>, path: &Path) -> Result<()> {
        self.outputs.insert(role.into(), FileRecord::of(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| crate::usage(format!("{}: {e}", path.display())))?;
        let found = value.get("schema_version").and_then(|v| v.as_u64());
        if found != Some(MANIFEST_SCHEMA_VERSION as u64) {
            return Err(crate::usage(format!(
                "{}: unsupported manifest schema_version {found:?}",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| crate::usage(format!("{}: {e}", path.display())))
    }
}
