use ccb_core::bias::estimate_bias;
use ccb_core::dataset::{load_split, save_split, ShiftSpec, Split, ToyGenerator};
use ccb_core::eval::evaluate;
use ccb_core::losses::{ccb_loss, LossMode};
use ccb_core::model::{CcbModel, ModelConfig, ModelOptions};
use ccb_core::train::{load_history, save_history, train, Checkpoint, TrainConfig};
use ccb_core::Error;

fn small_generator() -> ToyGenerator {
    ToyGenerator::new(ShiftSpec {
        n_train: 200,
        n_test: 60,
        n_val: 60,
        n_qtypes: 4,
        regions: 3,
        region_dim: 24,
        seed: 11,
        ..ShiftSpec::default()
    })
    .unwrap()
}

fn small_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn full_batch_loss(model: &CcbModel, split: &Split, config: &TrainConfig) -> f64 {
    let bias = estimate_bias(split).unwrap();
    let biases: Vec<&[f64]> = split.instances.iter().map(|i| bias.bias_for(i.qtype).unwrap()).collect();
    let outputs: Vec<_> = split
        .instances
        .iter()
        .zip(&biases)
        .map(|(i, b)| model.forward(i, Some(b), true).unwrap().outputs)
        .collect();
    let labels: Vec<Vec<f64>> = split.instances.iter().map(|i| i.labels.clone()).collect();
    ccb_loss(&outputs, &labels, &biases, &config.loss_spec()).unwrap().l_ccb
}

#[test]
fn training_reduces_the_ccb_loss() {
    let gen = small_generator();
    let split = gen.train_split();
    let config = small_train_config();
    let options = ModelOptions::default();
    let fresh = CcbModel::new(ModelConfig::for_split(&split, &options, config.seed)).unwrap();
    let out = train(&config, &options, &split, &estimate_bias(&split).unwrap()).unwrap();
    let before = full_batch_loss(&fresh, &split, &config);
    let after = full_batch_loss(&out.checkpoint.model, &split, &config);
    assert!(after < before, "{after} >= {before}");
    assert_eq!(out.history.len(), 5 * 7);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let split = small_generator().train_split();
    let bias = estimate_bias(&split).unwrap();
    let config = TrainConfig { epochs: 2, ..small_train_config() };
    let a = train(&config, &ModelOptions::default(), &split, &bias).unwrap();
    let b = train(&config, &ModelOptions::default(), &split, &bias).unwrap();
    assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
    assert_eq!(a.history, b.history);
    let c = train(&TrainConfig { seed: 4, ..config }, &ModelOptions::default(), &split, &bias).unwrap();
    assert_ne!(a.checkpoint.model.params, c.checkpoint.model.params);
}

#[test]
fn baseline_history_has_no_branch_terms() {
    let split = small_generator().train_split();
    let bias = estimate_bias(&split).unwrap();
    let config = TrainConfig {
        epochs: 1,
        loss_mode: LossMode::MlBaseline,
        ..small_train_config()
    };
    let out = train(&config, &ModelOptions::default(), &split, &bias).unwrap();
    for rec in &out.history {
        assert!(rec.l_ml.is_some());
        assert_eq!((rec.l_cn, rec.l_cx, rec.l_p), (0.0, 0.0, 0.0));
    }
}

#[test]
fn exploding_learning_rate_reports_the_step() {
    let split = small_generator().train_split();
    let bias = estimate_bias(&split).unwrap();
    let config = TrainConfig {
        learning_rate: 1e300,
        ..small_train_config()
    };
    match train(&config, &ModelOptions::default(), &split, &bias) {
        Err(Error::Divergence { step, .. }) => assert!(step < 35),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.checkpoint.steps)),
    }
}

#[test]
fn bias_from_another_split_is_refused() {
    let gen = small_generator();
    let test = gen.test_split();
    let err = train(&small_train_config(), &ModelOptions::default(), &gen.train_split(), &estimate_bias(&test).unwrap());
    assert!(matches!(err, Err(Error::Validation { .. })));
}

#[test]
fn evaluation_refuses_a_bias_table_from_the_evaluated_split() {
    let gen = small_generator();
    let split = gen.train_split();
    let bias = estimate_bias(&split).unwrap();
    let out = train(&TrainConfig { epochs: 1, ..small_train_config() }, &ModelOptions::default(), &split, &bias).unwrap();
    assert!(matches!(evaluate(&out.checkpoint, &split, Some(&bias)), Err(Error::Leakage { .. })));
    let report = evaluate(&out.checkpoint, &gen.test_split(), Some(&bias)).unwrap();
    assert_eq!(report.n_evaluated, 60);
}

#[test]
fn artifacts_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let gen = small_generator();
    let split = gen.train_split();
    let split_path = dir.path().join("train.jsonl");
    save_split(&split, &split_path).unwrap();
    assert_eq!(load_split(&split_path).unwrap(), split);

    let bias = estimate_bias(&split).unwrap();
    let bias_path = dir.path().join("bias.txt");
    bias.save(&bias_path).unwrap();
    assert_eq!(ccb_core::bias::BiasTable::load(&bias_path).unwrap(), bias);

    let out = train(&TrainConfig { epochs: 1, ..small_train_config() }, &ModelOptions::default(), &split, &bias).unwrap();
    let ckpt_path = dir.path().join("checkpoint.json");
    out.checkpoint.save(&ckpt_path).unwrap();
    let back = Checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(back.to_json(), out.checkpoint.to_json());

    let hist_path = dir.path().join("history.jsonl");
    save_history(&out.history, &hist_path).unwrap();
    assert_eq!(load_history(&hist_path).unwrap(), out.history);

    let stale = out.checkpoint.to_json().replacen("\"schema_version\":1", "\"schema_version\":9", 1);
    std::fs::write(&ckpt_path, stale).unwrap();
    assert!(matches!(Checkpoint::load(&ckpt_path), Err(Error::Version { found: 9, .. })));
}
