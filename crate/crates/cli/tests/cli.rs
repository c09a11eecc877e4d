use std::path::Path;
use std::process::{Command, Output};

use ccb_core::dataset::load_split;

const SMALL: [&str; 6] = ["--n-train", "300", "--n-test", "90", "--n-val", "90"];

fn ccb(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccb"))
        .args(args)
        .env("CCB_DATA_DIR", root)
        .current_dir(root)
        .output()
        .expect("spawn ccb")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_small(root: &Path) {
    let o = ccb(root, &[&["gen-data", "--seed", "3"][..], &SMALL[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_data_defaults_produce_loadable_splits() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccb(dir.path(), &["gen-data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["train", "test", "val"] {
        let split = load_split(dir.path().join(format!("{name}.jsonl"))).unwrap();
        assert_eq!(split.split_name, name);
        assert!(!split.instances.is_empty());
    }
    assert!(dir.path().join("gen-data.manifest.json").is_file());
}

#[test]
fn out_of_range_skew_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccb(dir.path(), &["gen-data", "--skew", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("skew"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccb(dir.path(), &["train", "--train", "nowhere.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccb(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_refuses_a_bias_table_from_the_evaluated_split() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    gen_small(root);
    let o = ccb(root, &["train", "--train", "test.jsonl", "--epochs", "1", "--out-dir", "leaky"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ccb(
        root,
        &["eval", "--checkpoint", "leaky/checkpoint.json", "--split", "test.jsonl", "--bias", "leaky/bias.txt"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("same split"), "{}", stderr(&o));
}

#[test]
fn train_then_eval_writes_metrics_and_a_table_row() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    gen_small(root);
    let o = ccb(root, &["train", "--epochs", "2", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = root.join("runs").join("ccb-seed1");
    for f in ["bias.txt", "checkpoint.json", "history.jsonl", "train.manifest.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let ckpt = run.join("checkpoint.json");
    let o = ccb(
        root,
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "test.jsonl", "--reference", "val.jsonl"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("metrics-test.json").is_file());
    assert!(run.join("metrics-val.json").is_file());
    assert!(stdout(&o).contains('|'), "{}", stdout(&o));

    let rows = format!("+CCB={},{}", run.join("metrics-test.json").display(), run.join("metrics-val.json").display());
    let o = ccb(root, &["report", "--row", &rows]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(root.join("report").join("report.txt")).unwrap();
    let header = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = header.split_whitespace().filter(|t| *t != "|").collect();
    assert_eq!(
        cols,
        ["Model", "Overall", "Yes/No", "Number", "Other", "Overall", "Yes/No", "Number", "Other", "Gap"]
    );
    assert!(text.lines().any(|l| l.starts_with("+CCB")));
}

#[test]
fn ablate_renders_every_cell_with_spread() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccb(dir.path(), &[&["ablate", "--seeds", "2", "--epochs", "1"][..], &SMALL[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("ablation").join("ablation.txt")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 10, "{text}");
    assert!(rows.iter().all(|r| r.contains('±')), "{text}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    gen_small(root);
    std::fs::write(root.join("exp.toml"), "[train]\nepochs = 3\nlearning_rate = 0.004\n").unwrap();
    let o = ccb(root, &["--config", "exp.toml", "train", "--epochs", "1", "--out-dir", "cfg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("cfg").join("train.manifest.json")).unwrap()).unwrap();
    let train = &manifest["invocation"]["train"];
    assert_eq!(train["epochs"], 1);
    assert_eq!(train["learning_rate"], 0.004);
}

#[test]
fn config_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let o = ccb(dir.path(), &["--config", "bad.toml", "gen-data"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
