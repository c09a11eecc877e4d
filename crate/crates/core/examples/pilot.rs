//! Runs the shift experiment grid and prints per-seed accuracies and timings.
//!
//! cargo run --release -p ccb-core --example pilot -- [n_seeds] [epochs] [section.key=value ...]

use std::time::Instant;

use ccb_core::ablation::{run_ablation, AblationCell, ExperimentConfig};
use ccb_core::losses::LossMode;

fn main() -> ccb_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_seeds: u64 = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let mut base = ExperimentConfig::default();
    if let Some(e) = args.get(2).and_then(|a| a.parse().ok()) {
        base.train.epochs = e;
    }
    // remaining args: dotted overrides merged into the experiment config, e.g. model.fusion_mode=literal
    let mut value = serde_json::to_value(&base).unwrap();
    for kv in args.iter().skip(3) {
        let (key, raw) = kv.split_once('=').expect("key=value");
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot.get_mut(part).expect("known key");
        }
        *slot = parsed;
    }
    let base: ExperimentConfig = serde_json::from_value(value).unwrap();
    let grid = [
        AblationCell::baseline(LossMode::MlBaseline),
        AblationCell::baseline(LossMode::LmhBaseline),
        AblationCell::ccb(1.0, true),
        AblationCell::ccb(0.0, true),
        AblationCell::ccb(1.0, false),
        AblationCell::ccb(0.0, false),
    ];
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let start = Instant::now();
    let table = run_ablation(&base, &grid, &seeds)?;
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    for cell in &table.cells {
        let acc: Vec<String> = cell.runs.iter().map(|r| format!("{:.1}", r.shifted.overall)).collect();
        let id: Vec<String> = cell.runs.iter().map(|r| format!("{:.1}", r.in_distribution_overall)).collect();
        println!(
            "{:<16} shifted mean {:6.2} [{}]  in-dist [{}]  gap {:6.2}",
            cell.cell.label(),
            cell.mean_shifted(),
            acc.join(", "),
            id.join(", "),
            cell.mean_gap()
        );
    }
    println!("{}", table.render());
    Ok(())
}
