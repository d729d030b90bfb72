//! Allocation/outcome trade-off on the stylized two-group population.
//!
//! Traces the frontier of maximum expected appearances against the target
//! group's treatment share at budget 1/3, and marks the standard reference
//! allocations (random, parity, appearance-maximizing, equal FNR).

use fairalloc::chart::{line_chart, Series};
use fairalloc::policy::{pareto_frontier, reference_points};
use fairalloc::population::{expected_rewards, stylized, RewardFunction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 100_000;
    let budget = 1.0 / 3.0;
    let (pop, model) = stylized::generate(n, 11)?;
    let rewards = expected_rewards(&pop, &RewardFunction::OutcomeIdentity, &model)?;

    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let points = pareto_frontier(&pop, &rewards, budget, stylized::GROUP_TARGET, &grid, false)?;

    println!("q (target share)   appearances   parity gap");
    for p in points.iter().filter(|p| p.feasible).step_by(10) {
        println!(
            "{:>16.2}   {:>11.5}   {:>10.4}",
            p.target_allocation,
            p.expected_appearances.unwrap(),
            p.parity_gap.unwrap()
        );
    }

    let refs = reference_points(&pop, &model, &rewards, budget, stylized::GROUP_TARGET)?;
    println!("\nreference points:");
    println!(
        "  random allocation  q = {:.4}  appearances = {:.5}",
        refs.random_allocation.target_allocation, refs.random_allocation.expected_appearances
    );
    println!(
        "  parity             q = {:.4}  appearances = {:.5}",
        refs.parity.target_allocation, refs.parity.expected_appearances
    );
    println!(
        "  max appearances    q = {:.4}  appearances = {:.5}",
        refs.max_appearance.target_allocation, refs.max_appearance.expected_appearances
    );
    println!(
        "  equal FNR          q = {:.4}  appearances = {:.5}  (FNRs {:.4} / {:.4})",
        refs.equal_fnr.target_allocation,
        refs.equal_fnr.expected_appearances,
        refs.equal_fnr.fnr_target,
        refs.equal_fnr.fnr_other
    );

    let curve: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.expected_appearances.map(|v| (p.target_allocation, v)))
        .collect();
    let svg = line_chart(
        "Appearances vs target-group share (budget 1/3)",
        "target-group treatment share",
        "expected appearances",
        &[Series::new("frontier", curve)],
    );
    std::fs::write("frontier.svg", svg)?;
    println!("\nwrote frontier.svg");
    Ok(())
}
