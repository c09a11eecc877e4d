use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccb_core::ablation::{default_grid, run_ablation, AblationTable, ExperimentConfig};
use ccb_core::bias::{estimate_bias_smoothed, BiasTable};
use ccb_core::dataset::{dataset_stats, load_split, save_split, ShiftSpec, ToyGenerator};
use ccb_core::eval::{evaluate_head, MetricsReport, METRICS_SCHEMA_VERSION};
use ccb_core::model::{Head, ModelOptions};
use ccb_core::report::{render_table1, Table1Row};
use ccb_core::train::{save_history, train as fit, Checkpoint, TrainConfig};

use crate::manifest::{Invocation, RunManifest, Table1Source};
use crate::usage;

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("{what} not found: {}", p.display())));
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

pub fn gen_data(spec: ShiftSpec, out: &Path) -> Result<()> {
    execute(&Invocation::GenData { data: spec }, out).map(|_| ())
}

pub fn train(train_split: &Path, model: ModelOptions, train: TrainConfig, smoothing: f64, out: &Path) -> Result<()> {
    let inv = Invocation::Train {
        train_split: absolute(train_split),
        model,
        train,
        smoothing_epsilon: smoothing,
    };
    execute(&inv, out).map(|_| ())
}

pub fn eval(
    checkpoint: &Path,
    split: &Path,
    bias: Option<&Path>,
    reference: Option<&Path>,
    head: Option<Head>,
    out: &Path,
) -> Result<()> {
    let inv = Invocation::Eval {
        checkpoint: absolute(checkpoint),
        split: absolute(split),
        bias: bias.map(absolute),
        reference: reference.map(absolute),
        head,
    };
    execute(&inv, out).map(|_| ())
}

pub fn ablate(config: ExperimentConfig, seeds: Vec<u64>, out: &Path) -> Result<()> {
    execute(&Invocation::Ablate { config, seeds }, out).map(|_| ())
}

pub fn report(table1: Vec<Table1Source>, ablation: Option<PathBuf>, out: &Path) -> Result<()> {
    let table1 = table1
        .into_iter()
        .map(|s| Table1Source {
            shifted: absolute(&s.shifted),
            in_distribution: s.in_distribution.as_deref().map(absolute),
            ..s
        })
        .collect();
    let inv = Invocation::Report {
        table1,
        table2: ablation.as_deref().map(absolute),
    };
    execute(&inv, out).map(|_| ())
}

/// Runs `manifest`'s invocation again into `out` and compares output hashes.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<()> {
    require_file(manifest_path, "manifest")?;
    let recorded = RunManifest::load(manifest_path)?;
    for (role, rec) in &recorded.inputs {
        require_file(&rec.path, role)?;
        let now = crate::manifest::sha256_file(&rec.path)?;
        if now != rec.sha256 {
            return Err(usage(format!(
                "input `{role}` ({}) changed since the recorded run",
                rec.path.display()
            )));
        }
    }
    let fresh = execute(&recorded.invocation, out)?;
    let mut mismatched = Vec::new();
    for (role, rec) in &recorded.outputs {
        let status = match fresh.outputs.get(role) {
            Some(new) if new.sha256 == rec.sha256 => "identical",
            Some(_) => {
                mismatched.push(role.clone());
                "DIFFERS"
            }
            None => {
                mismatched.push(role.clone());
                "MISSING"
            }
        };
        println!("{status:<9} {role} {}", rec.sha256);
    }
    if !mismatched.is_empty() {
        bail!("replay produced different outputs: {}", mismatched.join(", "));
    }
    Ok(())
}

/// Runs one invocation, writing its outputs and manifest under `out`.
fn execute(inv: &Invocation, out: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(inv.clone());
    let mut manifest_name = format!("{}.manifest.json", inv.name());
    match inv {
        Invocation::GenData { data } => {
            let gen = ToyGenerator::new(data.clone())?;
            create_dir(out)?;
            for split in [gen.train_split(), gen.test_split(), gen.val_split()] {
                let path = out.join(format!("{}.jsonl", split.split_name));
                save_split(&split, &path)?;
                manifest.output(&split.split_name, &path)?;
                let stats = dataset_stats(&split);
                println!(
                    "{:<5} {:>6} instances  {}",
                    split.split_name,
                    split.len(),
                    stats
                        .category_counts
                        .iter()
                        .map(|(c, n)| format!("{}={n}", c.as_str()))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
            }
        }
        Invocation::Train {
            train_split,
            model,
            train,
            smoothing_epsilon,
        } => {
            require_file(train_split, "training split")?;
            manifest.input("train_split", train_split)?;
            let split = load_split(train_split)?;
            let bias = estimate_bias_smoothed(&split, *smoothing_epsilon)?;
            let result = fit(train, model, &split, &bias)?;
            create_dir(out)?;
            let files = [
                ("bias", out.join("bias.txt")),
                ("checkpoint", out.join("checkpoint.json")),
                ("history", out.join("history.jsonl")),
            ];
            bias.save(&files[0].1)?;
            result.checkpoint.save(&files[1].1)?;
            save_history(&result.history, &files[2].1)?;
            for (role, path) in &files {
                manifest.output(*role, path)?;
            }
            if let Some(last) = result.history.last() {
                let objective = last.l_ml.unwrap_or(last.l_ccb);
                println!("trained {} steps; final batch loss {objective:.5}", result.checkpoint.steps);
            }
            println!("checkpoint: {}", files[1].1.display());
        }
        Invocation::Eval {
            checkpoint,
            split,
            bias,
            reference,
            head,
        } => {
            require_file(checkpoint, "checkpoint")?;
            require_file(split, "split")?;
            manifest.input("checkpoint", checkpoint)?;
            manifest.input("split", split)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let data = load_split(split)?;
            let table = match bias {
                Some(p) => {
                    require_file(p, "bias table")?;
                    manifest.input("bias", p)?;
                    Some(BiasTable::load(p)?)
                }
                None => None,
            };
            let head = head.unwrap_or_else(|| ckpt.prediction_head());
            let mut report = evaluate_head(&ckpt, &data, table.as_ref(), head)?;
            create_dir(out)?;
            let mut in_dist = None;
            if let Some(r) = reference {
                require_file(r, "reference split")?;
                manifest.input("reference", r)?;
                let ref_split = load_split(r)?;
                let id = evaluate_head(&ckpt, &ref_split, table.as_ref(), head)?;
                report = report.with_gap(&id);
                let path = out.join(format!("metrics-{}.json", id.split_name));
                write_text(&path, &id.to_json())?;
                manifest.output(format!("metrics_{}", id.split_name), &path)?;
                in_dist = Some(id);
            }
            let path = out.join(format!("metrics-{}.json", report.split_name));
            write_text(&path, &report.to_json())?;
            manifest.output(format!("metrics_{}", report.split_name), &path)?;
            manifest_name = format!("eval-{}.manifest.json", report.split_name);
            let name = serde_json::to_value(ckpt.train_config.loss_mode)?
                .as_str()
                .unwrap_or("model")
                .to_string();
            print!("{}", render_table1(&[Table1Row::from_reports(&name, &report, in_dist.as_ref())]));
        }
        Invocation::Ablate { config, seeds } => {
            let table = run_ablation(config, &default_grid(), seeds)?;
            create_dir(out)?;
            let json = out.join("ablation.json");
            let text = out.join("ablation.txt");
            write_text(&json, &serde_json::to_string_pretty(&table)?)?;
            write_text(&text, &table.render())?;
            manifest.output("ablation_json", &json)?;
            manifest.output("ablation_table", &text)?;
            print!("{}", table.render());
        }
        Invocation::Report { table1, table2 } => {
            let mut text = String::new();
            if !table1.is_empty() {
                let mut rows = Vec::new();
                for (i, src) in table1.iter().enumerate() {
                    let shifted = load_metrics(&src.shifted)?;
                    manifest.input(format!("row{i}_shifted"), &src.shifted)?;
                    let id = match &src.in_distribution {
                        Some(p) => {
                            manifest.input(format!("row{i}_in_distribution"), p)?;
                            Some(load_metrics(p)?)
                        }
                        None => None,
                    };
                    rows.push(Table1Row::from_reports(&src.model, &shifted, id.as_ref()));
                }
                text.push_str(&render_table1(&rows));
            }
            if let Some(p) = table2 {
                require_file(p, "ablation result")?;
                manifest.input("ablation", p)?;
                let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let table: AblationTable =
                    serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&table.render());
            }
            create_dir(out)?;
            let path = out.join("report.txt");
            write_text(&path, &text)?;
            manifest.output("report", &path)?;
            print!("{text}");
        }
    }
    manifest.save(&out.join(manifest_name))?;
    Ok(manifest)
}

fn load_metrics(path: &Path) -> Result<MetricsReport> {
    require_file(path, "metrics file")?;
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: MetricsReport =
        serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if report.schema_version != METRICS_SCHEMA_VERSION {
        return Err(usage(format!(
            "{}: unsupported metrics schema_version {}",
            path.display(),
            report.schema_version
        )));
    }
    Ok(report)
}
