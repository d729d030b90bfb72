//! Absolute values in a linear objective.
//!
//! Maximizes `v1 + v2 - |v1 - v2|` over the simplex via the slack-variable
//! linearization, and dumps the resulting LP in text interchange format.

use fairalloc::lp::{solve_lp, AbsPenalty, LpInstance, Relation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut lp = LpInstance::new();
    let v1 = lp.add_var("v1", 1.0);
    let v2 = lp.add_var("v2", 1.0);
    lp.add_constraint(vec![(v1, 1.0), (v2, 1.0)], Relation::Eq, 1.0)?;
    let slacks = lp.linearize_abs(&[AbsPenalty {
        label: "gap".into(),
        weight: 1.0,
        coeffs: vec![(v1, 1.0), (v2, -1.0)],
    }])?;

    println!("{}", lp.to_lp_format());
    let sol = solve_lp(&lp);
    println!("status {:?}, objective {:.6}", sol.status, sol.objective_value);
    println!(
        "v1 = {:.4}, v2 = {:.4}, slack w = {:.6} (= |v1 - v2|)",
        sol.values[0],
        sol.values[1],
        sol.value(slacks[0])
    );
    Ok(())
}
