//! Adaptive policy learning on a synthetic client population.
//!
//! Generates a structural population, runs the online learning loop for a
//! few methods, and prints regret, percent-of-optimal, spend, and per-group
//! disparity summaries.

use std::collections::BTreeMap;
use std::time::Instant;

use fairalloc::bandit::{run_experiment, summarize, LearnerConfig, Method, ModelKind, WarmupSpec};
use fairalloc::population::structural::{self, StructuralConfig};
use fairalloc::population::{RewardFunction, RewardSpec, UtilitySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pop_cfg = StructuralConfig {
        size: 4000,
        ..Default::default()
    };
    let (pop, model) = structural::generate(&pop_cfg, 20240) ?;

    let mut parity_weights = BTreeMap::new();
    parity_weights.insert("vietnamese".into(), 0.004);
    parity_weights.insert("white".into(), 0.004);
    let spec = UtilitySpec {
        reward: RewardSpec::Function(RewardFunction::OutcomeIdentity),
        parity_weights,
        budget: 5.0,
    };

    let n = 1000;
    let reps = 20;
    let seed = 7;

    for method in [Method::Rct, Method::EGreedy, Method::Thompson, Method::Ucb] {
        let cfg = LearnerConfig {
            method,
            model: ModelKind::Logistic,
            epsilon: 0.1,
            ucb_percentile: 0.975,
            warmup: WarmupSpec {
                len: 4,
                require_groups: vec!["male".into(), "vietnamese".into()],
            },
            stop_n: None,
            candidate_size: 60,
            snapshot_every: 100,
            ..Default::default()
        };
        let start = Instant::now();
        let trace = run_experiment(&pop, &model, &spec, &cfg, n, reps, seed)?;
        let summary = summarize(&trace, &pop, spec.budget)?;
        let regret = summary.regret_curve.last().unwrap();
        let pct = summary.pct_of_optimal.last().unwrap();
        println!(
            "{:<14} cum regret {:7.2} (se {:5.2})  pct-of-optimal {:6.2}%  mean spend ${:.3}  [{:?}]",
            method.name(),
            regret.mean,
            regret.se,
            pct.mean,
            summary.mean_spend,
            start.elapsed(),
        );
        for g in &summary.group_spend {
            println!("    {:<12} mean spend ${:7.3}  disparity ${:+.3}", g.group, g.mean_spend, g.disparity);
        }
    }
    Ok(())
}
