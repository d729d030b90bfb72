//! Threshold structure of two-action optima.
//!
//! Solves the policy LP on a random two-action instance with a free control
//! and rewrites the solution as group-specific threshold rules on the
//! benefit-per-dollar ratio, checking that the threshold form matches the
//! LP's utility.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairalloc::policy::{extract_threshold, solve_policy, utility};
use fairalloc::population::{ContextSpec, Population, RewardSpec, UtilitySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 8;
    let contexts = (0..n)
        .map(|i| ContextSpec {
            id: format!("x{i}"),
            prob: 1.0 / n as f64,
            group_ids: vec![i % 2],
            costs: vec![0.0, rng.gen_range(0.5..3.0)],
            features: None,
            expected_rewards: None,
        })
        .collect();
    let pop = Population::new(
        vec!["none".into(), "treat".into()],
        vec!["g0".into(), "g1".into()],
        contexts,
    )?;
    let rewards: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let base = rng.gen_range(0.1..0.4);
            vec![base, base + rng.gen_range(0.05..0.5)]
        })
        .collect();
    let mut parity_weights = BTreeMap::new();
    parity_weights.insert("g0".into(), 0.05);
    parity_weights.insert("g1".into(), 0.05);
    let spec = UtilitySpec {
        reward: RewardSpec::Matrix(rewards.clone()),
        parity_weights,
        budget: 0.8,
    };

    let (lp_policy, lp_value) = solve_policy(&pop, &rewards, &spec)?;
    println!("LP utility {lp_value:.6}");

    let threshold = extract_threshold(&lp_policy, &pop, &rewards)?;
    for t in &threshold.thresholds {
        println!(
            "group {}: treat above ratio {:.4}, boundary probability {:.4}",
            pop.groups[t.group], t.ratio, t.boundary_prob
        );
    }
    let materialized = threshold.materialize(&pop, &rewards)?;
    let tp_value = utility(&materialized, &pop, &rewards, &spec)?;
    println!("threshold-form utility {tp_value:.6} (difference {:.2e})", lp_value - tp_value);

    println!("\nper-context treatment probabilities (LP vs threshold):");
    for (i, ctx) in pop.contexts.iter().enumerate() {
        let ratio = (rewards[i][1] - rewards[i][0]) / ctx.costs[1];
        println!(
            "  {} ({}) ratio {:.4}: {:.4} vs {:.4}",
            ctx.id,
            pop.groups[ctx.group_ids[0]],
            ratio,
            lp_policy.prob(i, 1),
            materialized.prob(i, 1)
        );
    }
    Ok(())
}
