//! The counterexample to per-dollar greedy ranking.
//!
//! Loads the bundled two-context population where a cheap action has the
//! best benefit-per-dollar ratio everywhere, solves the policy LP, and
//! compares against the greedy ranking heuristic.

use std::collections::BTreeMap;

use fairalloc::io::population_from_toml;
use fairalloc::policy::{greedy_per_dollar, solve_policy, utility, Policy};
use fairalloc::population::{RewardSpec, UtilitySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/counterexample.toml"
    ))?;
    let (pop, _) = population_from_toml(&text)?;
    let rewards = pop.embedded_rewards().expect("fixture embeds rewards");
    let spec = UtilitySpec {
        reward: RewardSpec::Matrix(rewards.clone()),
        parity_weights: BTreeMap::new(),
        budget: 1.0,
    };

    let (optimal, value) = solve_policy(&pop, &rewards, &spec)?;
    println!("LP optimum: utility {value:.6}");
    for (ctx, row) in pop.contexts.iter().zip(optimal.rows.iter()) {
        println!("  {}  ->  {row:?}", ctx.id);
    }

    let (greedy, greedy_value) = greedy_per_dollar(&pop, &rewards, &spec)?;
    println!("greedy per-dollar ranking: utility {greedy_value:.6}");
    for (ctx, row) in pop.contexts.iter().zip(greedy.rows.iter()) {
        println!("  {}  ->  {row:?}", ctx.id);
    }

    let everyone_cheap = Policy::constant(pop.n_contexts(), pop.n_actions(), 2);
    println!(
        "treat everyone with the cheap action: utility {:.6}",
        utility(&everyone_cheap, &pop, &rewards, &spec)?
    );
    println!(
        "\nthe ratio-best action is strictly suboptimal here: {greedy_value:.3} < {value:.3}"
    );
    Ok(())
}
