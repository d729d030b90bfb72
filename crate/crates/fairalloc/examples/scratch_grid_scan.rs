//! Scratch: measure worst-case LP-vs-grid gap for candidate instance
//! distributions of the acceptance oracle test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use fairalloc::policy::solve_policy;
use fairalloc::population::{ContextSpec, Population, RewardMatrix, RewardSpec, UtilitySpec};

fn grid_search(
    pop: &Population,
    rewards: &RewardMatrix,
    spec: &UtilitySpec,
    step: f64,
) -> f64 {
    // Simple odometer over per-context compositions (slow, scratch only).
    let n = pop.n_contexts();
    let k = pop.n_actions();
    let levels = (1.0 / step).round() as usize;
    let mut options: Vec<Vec<f64>> = Vec::new();
    fn compose(slot: usize, k: usize, rem: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>, step: f64) {
        if slot == k - 1 {
            cur[slot] = rem;
            out.push(cur.iter().map(|&c| c as f64 * step).collect());
            return;
        }
        for t in 0..=rem {
            cur[slot] = t;
            compose(slot + 1, k, rem - t, cur, out, step);
        }
    }
    let mut cur = vec![0usize; k];
    compose(0, k, levels, &mut cur, &mut options, step);

    let mut idx = vec![0usize; n];
    let mut best = f64::MIN;
    loop {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| options[i].clone()).collect();
        let policy = fairalloc::policy::Policy { rows };
        if policy.expected_spend(pop) <= spec.budget + 1e-12 {
            let u = fairalloc::policy::utility(&policy, pop, rewards, spec).unwrap();
            best = best.max(u);
        }
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < options.len() {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == n {
                return best;
            }
        }
    }
}

fn instance(rng: &mut ChaCha8Rng, variant: u32) -> (Population, RewardMatrix, UtilitySpec) {
    let k = if rng.gen_bool(0.4) { 3 } else { 2 };
    let n = if k == 3 { rng.gen_range(1..=2) } else { rng.gen_range(2..=3) };
    let n_groups = rng.gen_range(1..=2usize).min(n);
    let contexts: Vec<ContextSpec> = (0..n)
        .map(|i| {
            let mut costs = vec![0.0];
            for _ in 1..k {
                let c = match variant {
                    0 => 0.5 * rng.gen_range(1..=5) as f64,
                    _ => [1.0, 2.0][rng.gen_range(0..2)],
                };
                costs.push(c);
            }
            ContextSpec {
                id: format!("x{i}"),
                prob: 1.0 / n as f64,
                group_ids: vec![i % n_groups],
                costs,
                features: None,
                expected_rewards: None,
            }
        })
        .collect();
    let pop = Population::new(
        (0..k).map(|a| format!("a{a}")).collect(),
        (0..n_groups).map(|g| format!("g{g}")).collect(),
        contexts,
    )
    .unwrap();
    let rewards: RewardMatrix = (0..n)
        .map(|_| {
            let base = rng.gen_range(0.0..0.3);
            (0..k)
                .map(|a| if a == 0 { base } else { base + rng.gen_range(0.0..0.5) })
                .collect()
        })
        .collect();
    let mut parity_weights = BTreeMap::new();
    if n_groups == 2 {
        let lam = match variant {
            0 => rng.gen_range(0.0..0.02),
            1 => rng.gen_range(0.0..0.02),
            _ => 0.01 * rng.gen_range(0..=2) as f64,
        };
        parity_weights.insert("g0".into(), lam);
        parity_weights.insert("g1".into(), lam);
    }
    let budget = match variant {
        0 => rng.gen_range(0.2..1.0),
        _ => 0.02 * rng.gen_range(10..=50) as f64,
    };
    let spec = UtilitySpec {
        reward: RewardSpec::Matrix(rewards.clone()),
        parity_weights,
        budget,
    };
    (pop, rewards, spec)
}

fn main() {
    for variant in 0..3u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut max_gap: f64 = 0.0;
        let mut argmax = 0;
        for trial in 0..1500 {
            let (pop, rewards, spec) = instance(&mut rng, variant);
            let (_, value) = solve_policy(&pop, &rewards, &spec).unwrap();
            let grid = grid_search(&pop, &rewards, &spec, 0.01);
            let gap = value - grid;
            if gap > max_gap {
                max_gap = gap;
                argmax = trial;
            }
        }
        println!("variant {variant}: max gap {max_gap:.3e} at trial {argmax}");
    }
}
