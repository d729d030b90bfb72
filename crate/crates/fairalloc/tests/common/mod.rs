//! Shared oracles for integration tests: brute-force LP solving by vertex
//! enumeration, exhaustive grid search over policies, random instance
//! generators, and small statistics helpers. Everything here is written
//! against the problem definitions directly and never calls the simplex or
//! the policy builder, so it can serve as an independent check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use fairalloc::population::{ContextSpec, Population, RewardMatrix, RewardSpec, UtilitySpec};

/// Constraint sense for the oracle's dense rows.
#[derive(Clone, Copy, PartialEq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

pub struct DenseLp {
    /// Objective coefficients (maximize).
    pub objective: Vec<f64>,
    /// Dense rows `(coeffs, sense, rhs)`; variables are nonnegative.
    pub rows: Vec<(Vec<f64>, Sense, f64)>,
}

/// Brute-force optimum by enumerating basic solutions: every choice of `n`
/// active constraints among the equalities (always active), the inequality
/// rows, and the nonnegativity bounds. Returns the best feasible objective,
/// or `None` when no feasible basic solution exists.
pub fn vertex_enumeration_optimum(lp: &DenseLp) -> Option<f64> {
    let n = lp.objective.len();
    let eq_rows: Vec<usize> = (0..lp.rows.len())
        .filter(|&i| lp.rows[i].1 == Sense::Eq)
        .collect();
    let ineq_rows: Vec<usize> = (0..lp.rows.len())
        .filter(|&i| lp.rows[i].1 != Sense::Eq)
        .collect();
    if eq_rows.len() > n {
        return None;
    }
    let need = n - eq_rows.len();
    // Candidate active constraints: inequality rows, then bounds x_i = 0.
    let n_candidates = ineq_rows.len() + n;
    if need > n_candidates {
        return None;
    }

    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..need).collect();
    let mut system = vec![0.0; n * (n + 1)];
    loop {
        // Assemble the active system.
        let mut row_idx = 0;
        for &r in &eq_rows {
            let (coeffs, _, rhs) = &lp.rows[r];
            system[row_idx * (n + 1)..row_idx * (n + 1) + n].copy_from_slice(coeffs);
            system[row_idx * (n + 1) + n] = *rhs;
            row_idx += 1;
        }
        for &c in &combo {
            if c < ineq_rows.len() {
                let (coeffs, _, rhs) = &lp.rows[ineq_rows[c]];
                system[row_idx * (n + 1)..row_idx * (n + 1) + n].copy_from_slice(coeffs);
                system[row_idx * (n + 1) + n] = *rhs;
            } else {
                let var = c - ineq_rows.len();
                for j in 0..n {
                    system[row_idx * (n + 1) + j] = 0.0;
                }
                system[row_idx * (n + 1) + var] = 1.0;
                system[row_idx * (n + 1) + n] = 0.0;
            }
            row_idx += 1;
        }
        if let Some(x) = solve_square(&mut system.clone(), n) {
            if feasible(lp, &x) {
                let obj: f64 = x.iter().zip(lp.objective.iter()).map(|(a, b)| a * b).sum();
                best = Some(match best {
                    None => obj,
                    Some(b) => b.max(obj),
                });
            }
        }
        // Next lexicographic combination.
        if !advance(&mut combo, n_candidates) {
            break;
        }
    }
    best
}

fn advance(combo: &mut [usize], n_candidates: usize) -> bool {
    let k = combo.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n_candidates - (k - i) {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting on an augmented system stored
/// row-major with width `n + 1`.
fn solve_square(aug: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let w = n + 1;
    for col in 0..n {
        let mut piv = col;
        let mut best = aug[col * w + col].abs();
        for r in col + 1..n {
            let v = aug[r * w + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-10 {
            return None;
        }
        if piv != col {
            for j in 0..w {
                aug.swap(col * w + j, piv * w + j);
            }
        }
        let inv = 1.0 / aug[col * w + col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = aug[r * w + col] * inv;
            if f != 0.0 {
                for j in col..w {
                    aug[r * w + j] -= f * aug[col * w + j];
                }
            }
        }
    }
    Some((0..n).map(|i| aug[i * w + n] / aug[i * w + i]).collect())
}

fn feasible(lp: &DenseLp, x: &[f64]) -> bool {
    const TOL: f64 = 1e-7;
    if x.iter().any(|&v| v < -TOL) {
        return false;
    }
    for (coeffs, sense, rhs) in &lp.rows {
        let lhs: f64 = coeffs.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let ok = match sense {
            Sense::Le => lhs <= rhs + TOL,
            Sense::Ge => lhs >= rhs - TOL,
            Sense::Eq => (lhs - rhs).abs() <= TOL,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Builds the dense policy LP (variables `v_{x,k}` then one `w_g` per
/// weighted group) directly from the utility definition, for the vertex
/// oracle. Written independently of the library's LP builder.
pub fn dense_policy_lp(pop: &Population, rewards: &RewardMatrix, spec: &UtilitySpec) -> DenseLp {
    let n = pop.n_contexts();
    let k = pop.n_actions();
    let weighted: Vec<(&String, f64)> = spec
        .parity_weights
        .iter()
        .map(|(g, &w)| (g, w))
        .collect();
    let n_vars = n * k + weighted.len();
    let vid = |x: usize, a: usize| x * k + a;

    let mut objective = vec![0.0; n_vars];
    for x in 0..n {
        for a in 0..k {
            objective[vid(x, a)] = pop.contexts[x].prob * rewards[x][a];
        }
    }
    for (gi, (_, w)) in weighted.iter().enumerate() {
        objective[n * k + gi] = -w;
    }

    let mut rows = Vec::new();
    for x in 0..n {
        let mut coeffs = vec![0.0; n_vars];
        for a in 0..k {
            coeffs[vid(x, a)] = 1.0;
        }
        rows.push((coeffs, Sense::Eq, 1.0));
    }
    let mut budget = vec![0.0; n_vars];
    for x in 0..n {
        for a in 0..k {
            budget[vid(x, a)] = pop.contexts[x].prob * pop.contexts[x].costs[a];
        }
    }
    rows.push((budget, Sense::Le, spec.budget));
    for (gi, (gname, _)) in weighted.iter().enumerate() {
        let g = pop.group_index(gname).expect("group exists");
        let mass = pop.group_mass(g);
        let mut beta = vec![0.0; n_vars];
        for (x, ctx) in pop.contexts.iter().enumerate() {
            let member = if ctx.group_ids.contains(&g) {
                ctx.prob / mass
            } else {
                0.0
            };
            for a in 0..k {
                beta[vid(x, a)] = (member - ctx.prob) * ctx.costs[a];
            }
        }
        let mut le = beta.clone();
        le[n * k + gi] = -1.0;
        rows.push((le, Sense::Le, 0.0));
        let mut ge = beta;
        ge[n * k + gi] = 1.0;
        rows.push((ge, Sense::Ge, 0.0));
    }
    DenseLp { objective, rows }
}

/// Exhaustive search over per-context action simplices discretized at
/// `step`, maximizing the exact utility among budget-feasible policies.
/// Runs depth-first with prefix sums, so the cost per leaf is constant.
pub fn grid_search_optimum(
    pop: &Population,
    rewards: &RewardMatrix,
    spec: &UtilitySpec,
    step: f64,
) -> f64 {
    let n = pop.n_contexts();
    let k = pop.n_actions();
    let levels = (1.0 / step).round() as usize;
    // All distributions over k actions with entries in multiples of `step`.
    let mut options: Vec<Vec<f64>> = Vec::new();
    let mut current = vec![0usize; k];
    enumerate_compositions(levels, k, 0, levels, &mut current, &mut options, step);

    let weighted: Vec<(usize, f64, f64)> = spec
        .parity_weights
        .iter()
        .map(|(g, &w)| {
            let gi = pop.group_index(g).expect("group exists");
            (gi, w, pop.group_mass(gi))
        })
        .collect();

    let mut contrib: Vec<Vec<Contribution>> = Vec::with_capacity(n);
    for x in 0..n {
        let mut per = Vec::with_capacity(options.len());
        for opt in &options {
            let mut reward = 0.0;
            let mut spend = 0.0;
            for a in 0..k {
                reward += opt[a] * rewards[x][a];
                spend += opt[a] * pop.contexts[x].costs[a];
            }
            per.push(Contribution {
                reward: pop.contexts[x].prob * reward,
                spend: pop.contexts[x].prob * spend,
            });
        }
        contrib.push(per);
    }
    let membership: Vec<Vec<bool>> = (0..n)
        .map(|x| {
            weighted
                .iter()
                .map(|&(g, _, _)| pop.contexts[x].group_ids.contains(&g))
                .collect()
        })
        .collect();

    let mut best = f64::MIN;
    let mut gspend = vec![0.0; weighted.len()];
    dfs(
        0,
        0.0,
        0.0,
        &mut gspend,
        &contrib,
        &membership,
        &weighted,
        spec.budget,
        &mut best,
    );
    best
}

/// Per-context, per-option probability-weighted contribution.
struct Contribution {
    reward: f64,
    spend: f64,
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    x: usize,
    reward: f64,
    spend: f64,
    gspend: &mut Vec<f64>,
    contrib: &[Vec<Contribution>],
    membership: &[Vec<bool>],
    weighted: &[(usize, f64, f64)],
    budget: f64,
    best: &mut f64,
) {
    if x == contrib.len() {
        if spend <= budget + 1e-12 {
            let mut u = reward;
            for (gi, &(_, w, mass)) in weighted.iter().enumerate() {
                u -= w * (gspend[gi] / mass - spend).abs();
            }
            if u > *best {
                *best = u;
            }
        }
        return;
    }
    for opt in &contrib[x] {
        let (r, s) = (opt.reward, opt.spend);
        // Spends only grow with depth, so overspent prefixes are dead.
        if spend + s > budget + 1e-12 {
            continue;
        }
        for (gi, member) in membership[x].iter().enumerate() {
            if *member {
                gspend[gi] += s;
            }
        }
        dfs(
            x + 1,
            reward + r,
            spend + s,
            gspend,
            contrib,
            membership,
            weighted,
            budget,
            best,
        );
        for (gi, member) in membership[x].iter().enumerate() {
            if *member {
                gspend[gi] -= s;
            }
        }
    }
}

fn enumerate_compositions(
    levels: usize,
    k: usize,
    slot: usize,
    remaining: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<f64>>,
    step: f64,
) {
    if slot == k - 1 {
        current[slot] = remaining;
        out.push(current.iter().map(|&c| c as f64 * step).collect());
        return;
    }
    for take in 0..=remaining {
        current[slot] = take;
        enumerate_compositions(levels, k, slot + 1, remaining - take, current, out, step);
    }
}

/// Random policy-optimization instance within the acceptance size caps.
/// Grid-search tractability bounds the context count when `k = 3`, and the
/// lattice structure (uniform probabilities, integer costs, budgets and
/// weights on a 0.02/0.005 grid) keeps LP vertices representable on the
/// oracle's 0.01 policy grid.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (Population, RewardMatrix, UtilitySpec) {
    let k = if rng.gen_bool(0.4) { 3 } else { 2 };
    let n = if k == 3 {
        rng.gen_range(1..=2)
    } else {
        rng.gen_range(2..=4)
    };
    let n_groups = rng.gen_range(1..=2usize).min(n);
    let contexts: Vec<ContextSpec> = (0..n)
        .map(|i| {
            let mut costs = vec![0.0];
            for _ in 1..k {
                costs.push([1.0, 2.0][rng.gen_range(0..2)]);
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
                .map(|a| {
                    if a == 0 {
                        base
                    } else {
                        base + rng.gen_range(0.0..0.5)
                    }
                })
                .collect()
        })
        .collect();
    let mut parity_weights = BTreeMap::new();
    if n_groups == 2 {
        let lam = 0.005 * rng.gen_range(0..=4) as f64;
        parity_weights.insert("g0".into(), lam);
        parity_weights.insert("g1".into(), lam);
    }
    let spec = UtilitySpec {
        reward: RewardSpec::Matrix(rewards.clone()),
        parity_weights,
        budget: 0.02 * rng.gen_range(10..=50) as f64,
    };
    (pop, rewards, spec)
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
