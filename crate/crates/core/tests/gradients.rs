mod common;

use ccb_core::losses::LossTerm;
use common::{random_problem, worst_relative_error};

const TERMS: [LossTerm; 5] = [
    LossTerm::Ml,
    LossTerm::Content,
    LossTerm::Context,
    LossTerm::Predict,
    LossTerm::Ccb,
];

#[test]
fn analytic_gradients_match_central_differences() {
    let mut failures = Vec::new();
    for seed in 0..24 {
        let p = random_problem(seed);
        for term in TERMS {
            let (err, name) = worst_relative_error(&p.analytic(term), &p.numeric(term, 1e-4));
            if err > 1e-4 {
                failures.push(format!("seed {seed} {term:?} {name}: {err:.2e}"));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn detached_context_leaves_encoders_untouched() {
    let mut p = random_problem(7);
    p.model.config.detach_context_encoders = true;
    let g = p.analytic(LossTerm::Context);
    for name in ccb_core::model::ENCODER_PARAMS {
        assert!(g.get(name).unwrap().data.iter().all(|&v| v == 0.0), "{name}");
    }
}
