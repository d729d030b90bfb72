//! Sample-size calculators for the three reward settings, plus an
//! empirical check that the tabular bound suffices.

use std::collections::BTreeMap;

use fairalloc::design::{sample_bound, verify_bound_empirically, BoundQuery, CollectionStrategy};
use fairalloc::population::{ContextSpec, OutcomeModel, Population, RewardSpec, UtilitySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tabular = BoundQuery::Tabular {
        sigma: 0.5,
        epsilon: 0.5,
        delta: 0.1,
        n_contexts: 2,
        n_actions: 2,
        p_min: 0.5,
    };
    let linear = BoundQuery::Linear {
        sigma: 0.5,
        epsilon: 0.25,
        delta: 0.05,
        d: 6,
        rho0: 1.5,
        c: None,
        constant: None,
    };
    let logistic = BoundQuery::Logistic {
        epsilon: 0.25,
        delta: 0.05,
        d: 6,
        k0: 1.0,
        k1: 2.0,
        k2: 1.5,
        rho: 4.0,
        c: 2.45,
        constant: None,
    };
    for (name, q) in [("tabular", &tabular), ("linear", &linear), ("logistic", &logistic)] {
        let r = sample_bound(q)?;
        println!("{name:<9} n = {}", r.n);
        println!("          {}", r.expression);
    }

    // Empirical sufficiency of the tabular bound on a 2x2 instance.
    let pop = Population::new(
        vec!["a0".into(), "a1".into()],
        vec!["all".into()],
        (0..2)
            .map(|i| ContextSpec {
                id: format!("x{i}"),
                prob: 0.5,
                group_ids: vec![0],
                costs: vec![0.0, 1.0],
                features: None,
                expected_rewards: None,
            })
            .collect(),
    )?;
    let model = OutcomeModel::Tabular {
        means: vec![vec![0.3, 0.7], vec![0.6, 0.2]],
        noise_sd: 0.5,
    };
    let spec = UtilitySpec {
        reward: RewardSpec::Function(fairalloc::population::RewardFunction::OutcomeIdentity),
        parity_weights: BTreeMap::new(),
        budget: 0.5,
    };
    let fraction = verify_bound_empirically(
        &pop,
        &model,
        &spec,
        &tabular,
        &CollectionStrategy::RoundRobin,
        100,
        3,
    )?;
    println!(
        "\nempirical check: utility gap below eps=0.5 in {:.0}% of 100 replications",
        fraction * 100.0
    );
    Ok(())
}
