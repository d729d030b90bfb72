//! Policy optimization over discrete populations.
//!
//! A [`Policy`] assigns each context a probability distribution over
//! actions. [`utility`] scores a policy as expected reward minus weighted
//! absolute spending-parity penalties; [`solve_policy`] maximizes that
//! utility subject to the per-capita budget by linear programming, using the
//! absolute-value linearization from [`crate::lp`]. For two actions with a
//! free control there is an equivalent threshold form
//! ([`extract_threshold`]); for two groups with unit costs,
//! [`pareto_frontier`] traces the allocation/outcome trade-off and
//! [`reference_points`] computes standard comparison allocations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, AbsPenalty, LpInstance, LpStatus, Relation, VarId};
use crate::population::{OutcomeModel, Population, RewardMatrix, UtilitySpec};

/// A randomized decision policy: row `x` holds `P(action = a_k | context x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub rows: Vec<Vec<f64>>,
}

impl Policy {
    /// Validates row-stochasticity (nonnegative entries, rows summing to 1
    /// within 1e-9).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (x, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < -1e-12) {
                return Err(Error::InvalidPopulation(format!(
                    "policy row {x} has a negative or non-finite probability"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidPopulation(format!(
                    "policy row {x} sums to {s}, not 1"
                )));
            }
        }
        Ok(Policy { rows })
    }

    /// The policy that always takes `action`.
    pub fn constant(n_contexts: usize, n_actions: usize, action: usize) -> Self {
        let mut row = vec![0.0; n_actions];
        row[action] = 1.0;
        Policy {
            rows: vec![row; n_contexts],
        }
    }

    /// Uniform distribution over actions in every context.
    pub fn uniform(n_contexts: usize, n_actions: usize) -> Self {
        Policy {
            rows: vec![vec![1.0 / n_actions as f64; n_actions]; n_contexts],
        }
    }

    pub fn prob(&self, x: usize, k: usize) -> f64 {
        self.rows[x][k]
    }

    /// Expected per-capita spend under the population distribution.
    pub fn expected_spend(&self, pop: &Population) -> f64 {
        pop.contexts
            .iter()
            .zip(self.rows.iter())
            .map(|(c, row)| c.prob * dot(row, &c.costs))
            .sum()
    }

    /// Expected spend conditional on membership in group `g`.
    pub fn group_spend(&self, pop: &Population, g: usize) -> Result<f64> {
        let mut mass = 0.0;
        let mut spend = 0.0;
        for (c, row) in pop.contexts.iter().zip(self.rows.iter()) {
            if c.group_ids.contains(&g) {
                mass += c.prob;
                spend += c.prob * dot(row, &c.costs);
            }
        }
        if mass <= 0.0 {
            return Err(Error::UndefinedConditional {
                group: pop.groups.get(g).cloned().unwrap_or_else(|| g.to_string()),
            });
        }
        Ok(spend / mass)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Expected reward of a policy: `sum_x p_x sum_k v_xk f(x,k)`.
pub fn expected_reward(policy: &Policy, pop: &Population, rewards: &RewardMatrix) -> f64 {
    pop.contexts
        .iter()
        .zip(policy.rows.iter())
        .zip(rewards.iter())
        .map(|((c, row), f)| c.prob * dot(row, f))
        .sum()
}

/// The weighted parity penalty `sum_g lambda_g |E[c|g] - E[c]|`.
pub fn parity_penalty(policy: &Policy, pop: &Population, spec: &UtilitySpec) -> Result<f64> {
    let overall = policy.expected_spend(pop);
    let mut penalty = 0.0;
    for (name, &weight) in &spec.parity_weights {
        let g = pop
            .group_index(name)
            .ok_or_else(|| Error::UndefinedConditional {
                group: name.clone(),
            })?;
        let conditional = policy.group_spend(pop, g)?;
        penalty += weight * (conditional - overall).abs();
    }
    Ok(penalty)
}

/// Utility of a policy: expected reward minus the parity penalty, computed
/// exactly from the discrete distribution. With an estimated reward matrix
/// this is the estimated utility.
pub fn utility(
    policy: &Policy,
    pop: &Population,
    rewards: &RewardMatrix,
    spec: &UtilitySpec,
) -> Result<f64> {
    Ok(expected_reward(policy, pop, rewards) - parity_penalty(policy, pop, spec)?)
}

/// The policy LP together with its variable layout.
pub struct PolicyLp {
    pub lp: LpInstance,
    /// `vars[x][k]` is the LP variable for `P(pi(x) = a_k)`.
    pub vars: Vec<Vec<VarId>>,
    /// Parity slack variables, in `parity_weights` iteration order.
    pub slacks: Vec<VarId>,
}

/// Builds the policy LP: maximize
/// `sum p_x f(x,k) v_xk - sum_g lambda_g w_g` subject to row-stochastic
/// rows, the budget `sum p_x c(x,k) v_xk <= b`, and the linearized parity
/// constraints `-w_g <= beta_g . v <= w_g`.
pub fn build_policy_lp(
    pop: &Population,
    rewards: &RewardMatrix,
    spec: &UtilitySpec,
) -> Result<PolicyLp> {
    spec.validate()?;
    let n = pop.n_contexts();
    let k = pop.n_actions();
    let mut lp = LpInstance::new();

    let mut vars = Vec::with_capacity(n);
    for (x, ctx) in pop.contexts.iter().enumerate() {
        let mut row = Vec::with_capacity(k);
        for a in 0..k {
            row.push(lp.add_var(format!("v{x}_{a}"), ctx.prob * rewards[x][a]));
        }
        vars.push(row);
    }
    for row in &vars {
        lp.add_constraint(row.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0)?;
    }

    let mut budget_terms = Vec::new();
    for (x, ctx) in pop.contexts.iter().enumerate() {
        for a in 0..k {
            let coeff = ctx.prob * ctx.costs[a];
            if coeff != 0.0 {
                budget_terms.push((vars[x][a], coeff));
            }
        }
    }
    lp.add_constraint(budget_terms, Relation::Le, spec.budget)?;

    let mut penalties = Vec::new();
    for (name, &weight) in &spec.parity_weights {
        let g = pop
            .group_index(name)
            .ok_or_else(|| Error::UndefinedConditional {
                group: name.clone(),
            })?;
        let mass = pop.group_mass(g);
        if mass <= 0.0 {
            return Err(Error::UndefinedConditional {
                group: name.clone(),
            });
        }
        let mut coeffs = Vec::new();
        for (x, ctx) in pop.contexts.iter().enumerate() {
            let member = ctx.group_ids.contains(&g);
            for a in 0..k {
                if ctx.costs[a] != 0.0 {
                    let indicator = if member { ctx.prob / mass } else { 0.0 };
                    coeffs.push((vars[x][a], (indicator - ctx.prob) * ctx.costs[a]));
                }
            }
        }
        penalties.push(AbsPenalty {
            label: name.clone(),
            weight,
            coeffs,
        });
    }
    let slacks = lp.linearize_abs(&penalties)?;

    Ok(PolicyLp { lp, vars, slacks })
}

/// Solves for the utility-maximizing policy under the budget constraint.
/// Returns the policy and its utility (which matches the LP objective).
pub fn solve_policy(
    pop: &Population,
    rewards: &RewardMatrix,
    spec: &UtilitySpec,
) -> Result<(Policy, f64)> {
    let built = build_policy_lp(pop, rewards, spec)?;
    let sol = solve_lp(&built.lp);
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::InfeasibleBudget {
                budget: spec.budget,
            })
        }
        LpStatus::Unbounded => {
            return Err(Error::NumericalFailure {
                what: "policy LP reported unbounded".into(),
            })
        }
    }
    let mut rows = Vec::with_capacity(pop.n_contexts());
    for var_row in &built.vars {
        let mut row: Vec<f64> = var_row.iter().map(|&v| sol.value(v).max(0.0)).collect();
        let s: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= s;
        }
        rows.push(row);
    }
    let policy = Policy::new(rows)?;
    let value = utility(&policy, pop, rewards, spec)?;
    Ok((policy, value))
}

/// Greedy benefit-per-dollar baseline: rank costly cells by
/// `(f(x,k) - f(x,0)) / c(x,k)` and assign probability mass in that order
/// until the budget is exhausted. With more than two actions this heuristic
/// can be strictly suboptimal.
pub fn greedy_per_dollar(
    pop: &Population,
    rewards: &RewardMatrix,
    spec: &UtilitySpec,
) -> Result<(Policy, f64)> {
    spec.validate()?;
    let n = pop.n_contexts();
    let k = pop.n_actions();
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for x in 0..n {
        for a in 1..k {
            let uplift = rewards[x][a] - rewards[x][0];
            let cost = pop.contexts[x].costs[a];
            if uplift > 0.0 && cost > 0.0 {
                cells.push((x, a, uplift / cost));
            }
        }
    }
    cells.sort_by(|l, r| {
        r.2.partial_cmp(&l.2)
            .unwrap()
            .then(l.0.cmp(&r.0))
            .then(l.1.cmp(&r.1))
    });
    let mut rows = vec![vec![0.0; k]; n];
    let mut assigned = vec![0.0; n];
    let mut remaining = spec.budget;
    for (x, a, _) in cells {
        if remaining <= 0.0 {
            break;
        }
        let free = 1.0 - assigned[x];
        if free <= 0.0 {
            continue;
        }
        let unit_cost = pop.contexts[x].prob * pop.contexts[x].costs[a];
        let frac = (remaining / unit_cost).min(free);
        rows[x][a] += frac;
        assigned[x] += frac;
        remaining -= frac * unit_cost;
    }
    for (x, row) in rows.iter_mut().enumerate() {
        row[0] += 1.0 - assigned[x];
    }
    let policy = Policy::new(rows)?;
    let value = utility(&policy, pop, rewards, spec)?;
    Ok((policy, value))
}

/// Group-specific threshold rule for two-action problems: treat when the
/// benefit-per-dollar ratio exceeds the group's threshold, randomize at the
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// One entry per population group index.
    pub thresholds: Vec<GroupThreshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThreshold {
    pub group: usize,
    /// Treat strictly above this benefit-per-dollar ratio.
    pub ratio: f64,
    /// Treatment probability exactly at the ratio.
    pub boundary_prob: f64,
}

impl ThresholdPolicy {
    /// Materializes the threshold rule as an explicit policy.
    pub fn materialize(&self, pop: &Population, rewards: &RewardMatrix) -> Result<Policy> {
        let mut rows = Vec::with_capacity(pop.n_contexts());
        for (x, ctx) in pop.contexts.iter().enumerate() {
            let g = ctx.group_ids[0];
            let t = self
                .thresholds
                .iter()
                .find(|t| t.group == g)
                .ok_or_else(|| Error::ThresholdNotApplicable {
                    condition: format!("no threshold for group index {g}"),
                })?;
            let ratio = (rewards[x][1] - rewards[x][0]) / ctx.costs[1];
            let p = if ratio > t.ratio {
                1.0
            } else if ratio == t.ratio {
                t.boundary_prob
            } else {
                0.0
            };
            rows.push(vec![1.0 - p, p]);
        }
        Policy::new(rows)
    }
}

/// Rewrites a two-action policy as a group-specific threshold rule with the
/// same per-group expected spend. The result's utility is at least the
/// input's: within each group it reallocates the same spend toward the
/// largest benefit-per-dollar ratios, and the parity penalty only depends on
/// per-group spend.
pub fn extract_threshold(
    policy: &Policy,
    pop: &Population,
    rewards: &RewardMatrix,
) -> Result<ThresholdPolicy> {
    if pop.n_actions() != 2 {
        return Err(Error::ThresholdNotApplicable {
            condition: format!("requires exactly 2 actions, got {}", pop.n_actions()),
        });
    }
    for ctx in &pop.contexts {
        if ctx.costs[0] != 0.0 {
            return Err(Error::ThresholdNotApplicable {
                condition: format!("context `{}` has a costly control action", ctx.id),
            });
        }
        if ctx.costs[1] <= 0.0 {
            return Err(Error::ThresholdNotApplicable {
                condition: format!("context `{}` has a free treatment action", ctx.id),
            });
        }
        if ctx.group_ids.len() != 1 {
            return Err(Error::ThresholdNotApplicable {
                condition: format!(
                    "context `{}` belongs to {} groups; groups must partition contexts",
                    ctx.id,
                    ctx.group_ids.len()
                ),
            });
        }
    }
    for (x, f) in rewards.iter().enumerate() {
        if f[1] - f[0] <= 0.0 {
            return Err(Error::ThresholdNotApplicable {
                condition: format!(
                    "context `{}` has nonpositive treatment uplift",
                    pop.contexts[x].id
                ),
            });
        }
    }

    let mut thresholds = Vec::new();
    for g in 0..pop.groups.len() {
        let members: Vec<usize> = (0..pop.n_contexts())
            .filter(|&x| pop.contexts[x].group_ids[0] == g)
            .collect();
        if members.is_empty() {
            thresholds.push(GroupThreshold {
                group: g,
                ratio: f64::INFINITY,
                boundary_prob: 0.0,
            });
            continue;
        }
        // Per-group expected spend to preserve (unnormalized).
        let spend: f64 = members
            .iter()
            .map(|&x| pop.contexts[x].prob * policy.rows[x][1] * pop.contexts[x].costs[1])
            .sum();
        // Sort members by benefit-per-dollar ratio, descending.
        let mut ranked: Vec<(f64, usize)> = members
            .iter()
            .map(|&x| {
                (
                    (rewards[x][1] - rewards[x][0]) / pop.contexts[x].costs[1],
                    x,
                )
            })
            .collect();
        ranked.sort_by(|l, r| r.0.partial_cmp(&l.0).unwrap().then(l.1.cmp(&r.1)));

        // Fill greedily; contexts sharing the boundary ratio share the
        // boundary probability, keeping the threshold form exact.
        let mut budget = spend;
        let mut ratio = 0.0;
        let mut boundary_prob = 1.0;
        let mut i = 0;
        while i < ranked.len() {
            let r = ranked[i].0;
            let mut class_cost = 0.0;
            let mut j = i;
            while j < ranked.len() && ranked[j].0 == r {
                let x = ranked[j].1;
                class_cost += pop.contexts[x].prob * pop.contexts[x].costs[1];
                j += 1;
            }
            if budget >= class_cost - 1e-12 {
                budget -= class_cost;
                // Fully treated; threshold must sit strictly below r.
                ratio = 0.0;
                boundary_prob = 1.0;
                if budget <= 1e-12 && j < ranked.len() {
                    // Exactly exhausted: threshold at the next class.
                    ratio = ranked[j].0;
                    boundary_prob = 0.0;
                }
            } else {
                ratio = r;
                boundary_prob = (budget / class_cost).clamp(0.0, 1.0);
                break;
            }
            i = j;
        }
        if spend <= 1e-15 {
            ratio = ranked[0].0;
            boundary_prob = 0.0;
        }
        thresholds.push(GroupThreshold {
            group: g,
            ratio,
            boundary_prob,
        });
    }
    Ok(ThresholdPolicy { thresholds })
}

/// One point of the allocation/outcome trade-off curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoPoint {
    /// Target-group treatment share `P(pi = 1 | target group)`.
    pub target_allocation: f64,
    /// Whether the share is achievable with full budget use.
    pub feasible: bool,
    /// Maximum expected outcome at this share (feasible points only).
    pub expected_appearances: Option<f64>,
    /// The L1 distance between group-conditional and overall action
    /// distributions, `sum_g 2 |q_g - b|` (feasible points only).
    pub parity_gap: Option<f64>,
    pub policy: Option<Policy>,
}

/// Traces the trade-off frontier for a two-group, two-action population with
/// unit treatment cost: for each target-group share `q` in `q_grid`, finds
/// the maximum expected outcome among policies that treat the target group
/// at rate `q` and spend the whole budget. Infeasible shares are reported,
/// not dropped.
pub fn pareto_frontier(
    pop: &Population,
    rewards: &RewardMatrix,
    budget: f64,
    target_group: usize,
    q_grid: &[f64],
    store_policies: bool,
) -> Result<Vec<ParetoPoint>> {
    check_two_group_unit_cost(pop, target_group)?;
    let groups = GroupFill::split(pop, rewards, target_group);

    let mut points = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let target_mass = q * groups.target.mass;
        let other_rate = (budget - target_mass) / groups.other.mass;
        let feasible =
            (-1e-12..=1.0 + 1e-12).contains(&q) && (-1e-12..=1.0 + 1e-12).contains(&other_rate);
        if !feasible {
            points.push(ParetoPoint {
                target_allocation: q,
                feasible: false,
                expected_appearances: None,
                parity_gap: None,
                policy: None,
            });
            continue;
        }
        let q = q.clamp(0.0, 1.0);
        let other_rate = other_rate.clamp(0.0, 1.0);
        let appearances = groups.base
            + groups.target.gain(q * groups.target.mass)
            + groups.other.gain(other_rate * groups.other.mass);
        let parity_gap = 2.0 * (q - budget).abs() + 2.0 * (other_rate - budget).abs();
        let policy = if store_policies {
            let mut rows = vec![vec![1.0, 0.0]; pop.n_contexts()];
            groups.target.fill_rows(&mut rows, q * groups.target.mass);
            groups
                .other
                .fill_rows(&mut rows, other_rate * groups.other.mass);
            Some(Policy::new(rows)?)
        } else {
            None
        };
        points.push(ParetoPoint {
            target_allocation: q,
            feasible: true,
            expected_appearances: Some(appearances),
            parity_gap: Some(parity_gap),
            policy,
        });
    }
    Ok(points)
}

fn check_two_group_unit_cost(pop: &Population, target_group: usize) -> Result<()> {
    if pop.groups.len() != 2 {
        return Err(Error::ThresholdNotApplicable {
            condition: format!("frontier requires 2 groups, got {}", pop.groups.len()),
        });
    }
    if pop.n_actions() != 2 {
        return Err(Error::ThresholdNotApplicable {
            condition: format!("frontier requires 2 actions, got {}", pop.n_actions()),
        });
    }
    if target_group >= 2 {
        return Err(Error::ThresholdNotApplicable {
            condition: format!("unknown target group index {target_group}"),
        });
    }
    for ctx in &pop.contexts {
        if ctx.costs[0] != 0.0 || ctx.costs[1] != 1.0 {
            return Err(Error::ThresholdNotApplicable {
                condition: format!("context `{}` does not have costs (0, 1)", ctx.id),
            });
        }
        if ctx.group_ids.len() != 1 {
            return Err(Error::ThresholdNotApplicable {
                condition: format!("context `{}` belongs to multiple groups", ctx.id),
            });
        }
    }
    Ok(())
}

/// Greedy filler for one group: members sorted by treatment uplift with
/// prefix sums, so the best expected outcome at any spend level is a table
/// lookup plus interpolation in the boundary member.
struct GroupFill {
    /// (uplift, context index, prob), sorted by uplift descending.
    ranked: Vec<(f64, usize, f64)>,
    prefix_mass: Vec<f64>,
    prefix_gain: Vec<f64>,
    mass: f64,
}

struct GroupSplit {
    base: f64,
    target: GroupFill,
    other: GroupFill,
}

impl GroupFill {
    fn split(pop: &Population, rewards: &RewardMatrix, target_group: usize) -> GroupSplit {
        let mut base = 0.0;
        let mut members: [Vec<(f64, usize, f64)>; 2] = [Vec::new(), Vec::new()];
        for (x, ctx) in pop.contexts.iter().enumerate() {
            base += ctx.prob * rewards[x][0];
            let uplift = rewards[x][1] - rewards[x][0];
            let side = if ctx.group_ids[0] == target_group { 0 } else { 1 };
            members[side].push((uplift, x, ctx.prob));
        }
        let [target, other] = members;
        GroupSplit {
            base,
            target: GroupFill::new(target),
            other: GroupFill::new(other),
        }
    }

    fn new(mut ranked: Vec<(f64, usize, f64)>) -> Self {
        ranked.sort_by(|l, r| r.0.partial_cmp(&l.0).unwrap().then(l.1.cmp(&r.1)));
        let mut prefix_mass = Vec::with_capacity(ranked.len() + 1);
        let mut prefix_gain = Vec::with_capacity(ranked.len() + 1);
        prefix_mass.push(0.0);
        prefix_gain.push(0.0);
        for &(uplift, _, prob) in &ranked {
            prefix_mass.push(prefix_mass.last().unwrap() + prob);
            prefix_gain.push(prefix_gain.last().unwrap() + prob * uplift);
        }
        let mass = *prefix_mass.last().unwrap();
        GroupFill {
            ranked,
            prefix_mass,
            prefix_gain,
            mass,
        }
    }

    /// Best achievable uplift when treating exactly `spend` of this group's
    /// probability mass, treating the largest uplifts first.
    fn gain(&self, spend: f64) -> f64 {
        let spend = spend.clamp(0.0, self.mass);
        // Binary search for the boundary member.
        let mut lo = 0;
        let mut hi = self.ranked.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.prefix_mass[mid + 1] < spend {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo >= self.ranked.len() {
            return *self.prefix_gain.last().unwrap();
        }
        let covered = spend - self.prefix_mass[lo];
        self.prefix_gain[lo] + covered * self.ranked[lo].0
    }

    /// Writes the treating-top-uplift policy rows for spending `spend`.
    fn fill_rows(&self, rows: &mut [Vec<f64>], spend: f64) {
        let mut remaining = spend.clamp(0.0, self.mass);
        for &(_, x, prob) in &self.ranked {
            if remaining <= 0.0 {
                break;
            }
            let p = (remaining / prob).min(1.0);
            rows[x] = vec![1.0 - p, p];
            remaining -= p * prob;
        }
    }
}

/// Standard comparison allocations for the frontier plot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferencePoints {
    /// Uniform treatment with probability `b` for everyone.
    pub random_allocation: RefPoint,
    /// Frontier point at the parity share `q = b`.
    pub parity: RefPoint,
    /// Frontier crest: budget spent on the largest uplifts overall.
    pub max_appearance: RefPoint,
    /// Per-group thresholds searched so that group false-negative rates
    /// among realized benefiters coincide while the budget is exhausted.
    pub equal_fnr: FnrPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefPoint {
    pub target_allocation: f64,
    pub expected_appearances: f64,
    /// L1 distance between group-conditional and overall action
    /// distributions, as on the frontier.
    pub parity_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FnrPoint {
    pub target_allocation: f64,
    pub expected_appearances: f64,
    pub parity_gap: f64,
    pub fnr_target: f64,
    pub fnr_other: f64,
}

/// Computes the reference allocations for a two-group, two-action,
/// unit-cost population. The equal-FNR point needs realized potential
/// outcomes, so the model must store latent draws.
pub fn reference_points(
    pop: &Population,
    model: &OutcomeModel,
    rewards: &RewardMatrix,
    budget: f64,
    target_group: usize,
) -> Result<ReferencePoints> {
    check_two_group_unit_cost(pop, target_group)?;
    let groups = GroupFill::split(pop, rewards, target_group);
    let b = budget;
    let gap_at = |q: f64| -> f64 {
        let other = ((b - q * groups.target.mass) / groups.other.mass).clamp(0.0, 1.0);
        2.0 * (q - b).abs() + 2.0 * (other - b).abs()
    };

    // Random allocation: everyone treated with probability b.
    let random_appearances = groups.base
        + pop
            .contexts
            .iter()
            .enumerate()
            .map(|(x, c)| c.prob * b * (rewards[x][1] - rewards[x][0]))
            .sum::<f64>();
    let random_allocation = RefPoint {
        target_allocation: b,
        expected_appearances: random_appearances,
        parity_gap: gap_at(b),
    };

    // Parity point: frontier at q = b.
    let parity = RefPoint {
        target_allocation: b,
        expected_appearances: groups.base
            + groups.target.gain(b * groups.target.mass)
            + groups.other.gain(b * groups.other.mass),
        parity_gap: gap_at(b),
    };

    // Max-appearance point: fill the largest uplifts globally.
    let mut all: Vec<(f64, bool, f64)> = groups
        .target
        .ranked
        .iter()
        .map(|&(u, _, p)| (u, true, p))
        .chain(groups.other.ranked.iter().map(|&(u, _, p)| (u, false, p)))
        .collect();
    all.sort_by(|l, r| r.0.partial_cmp(&l.0).unwrap());
    let mut remaining = b;
    let mut gain = 0.0;
    let mut target_spend = 0.0;
    for (uplift, is_target, prob) in all {
        if remaining <= 0.0 || uplift <= 0.0 {
            break;
        }
        let take = prob.min(remaining);
        gain += take * uplift;
        if is_target {
            target_spend += take;
        }
        remaining -= take;
    }
    let max_appearance = RefPoint {
        target_allocation: target_spend / groups.target.mass,
        expected_appearances: groups.base + gain,
        parity_gap: gap_at(target_spend / groups.target.mass),
    };

    // Equal-FNR point: bisect on the target-group share. FNR within a group
    // is computed over realized benefiters (y(0) = 0, y(1) = 1) under the
    // group's threshold policy and is monotone in the share.
    if model.realized_outcomes(pop, 0).is_none() {
        return Err(Error::ThresholdNotApplicable {
            condition: "equal-FNR point needs realized potential outcomes (stored latent draws)"
                .into(),
        });
    }
    let benefits = |x: usize| -> bool {
        let y = model.realized_outcomes(pop, x).unwrap();
        y[0] == 0.0 && y[1] == 1.0
    };
    for (side, g) in [(&groups.target, target_group), (&groups.other, 1 - target_group)] {
        if !side.ranked.iter().any(|&(_, x, _)| benefits(x)) {
            return Err(Error::FnrUndefined {
                group: pop.groups[g].clone(),
            });
        }
    }
    // Treated mass = share * group mass, applied to the top uplifts in
    // ranked order; benefiters below the cut are the false negatives.
    let fnr = |side: &GroupFill, share: f64| -> f64 {
        let mut remaining = (share * side.mass).clamp(0.0, side.mass);
        let mut total = 0.0;
        let mut missed = 0.0;
        for &(_, x, p) in &side.ranked {
            let treat = (remaining / p).min(1.0);
            remaining -= treat * p;
            if benefits(x) {
                total += p;
                missed += p * (1.0 - treat);
            }
        }
        missed / total
    };

    let mut lo = ((b - groups.other.mass) / groups.target.mass).max(0.0);
    let mut hi = (b / groups.target.mass).min(1.0);
    // FNR in the target group decreases and FNR in the other group increases
    // as the target share grows, so their difference is monotone.
    let other_share =
        |q: f64| ((b - q * groups.target.mass) / groups.other.mass).clamp(0.0, 1.0);
    let mut q_mid = 0.5 * (lo + hi);
    for _ in 0..60 {
        q_mid = 0.5 * (lo + hi);
        let diff = fnr(&groups.target, q_mid) - fnr(&groups.other, other_share(q_mid));
        if diff > 0.0 {
            lo = q_mid;
        } else {
            hi = q_mid;
        }
    }
    let o_share = other_share(q_mid);
    let equal_fnr = FnrPoint {
        target_allocation: q_mid,
        expected_appearances: groups.base
            + groups.target.gain(q_mid * groups.target.mass)
            + groups.other.gain(o_share * groups.other.mass),
        parity_gap: gap_at(q_mid),
        fnr_target: fnr(&groups.target, q_mid),
        fnr_other: fnr(&groups.other, o_share),
    };

    Ok(ReferencePoints {
        random_allocation,
        parity,
        max_appearance,
        equal_fnr,
    })
}

/// Utility gap between the policies optimal under true and estimated
/// rewards, with the two reward-error bounds that dominate it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapBound {
    /// `U(pi*) - U(pi_hat)`, both evaluated under the true rewards.
    pub gap: f64,
    /// `2 sum_x p_x max_k |f - f_hat|`.
    pub weighted_bound: f64,
    /// `2 max_{x,k} |f - f_hat|`.
    pub uniform_bound: f64,
}

/// Solves the policy problem under true and estimated rewards and verifies
/// the chain `gap <= weighted_bound <= uniform_bound` (up to 1e-9).
pub fn utility_gap_bound(
    pop: &Population,
    rewards_true: &RewardMatrix,
    rewards_est: &RewardMatrix,
    spec: &UtilitySpec,
) -> Result<GapBound> {
    let (_, opt_value) = solve_policy(pop, rewards_true, spec)?;
    let (est_policy, _) = solve_policy(pop, rewards_est, spec)?;
    let est_value = utility(&est_policy, pop, rewards_true, spec)?;
    let gap = opt_value - est_value;

    let mut weighted = 0.0;
    let mut uniform: f64 = 0.0;
    for (x, ctx) in pop.contexts.iter().enumerate() {
        let worst = rewards_true[x]
            .iter()
            .zip(rewards_est[x].iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        weighted += ctx.prob * worst;
        uniform = uniform.max(worst);
    }
    let bound = GapBound {
        gap,
        weighted_bound: 2.0 * weighted,
        uniform_bound: 2.0 * uniform,
    };
    if bound.gap > bound.weighted_bound + 1e-9
        || bound.weighted_bound > bound.uniform_bound + 1e-9
    {
        return Err(Error::NumericalFailure {
            what: format!(
                "utility gap bound chain violated: gap {} weighted {} uniform {}",
                bound.gap, bound.weighted_bound, bound.uniform_bound
            ),
        });
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::ContextSpec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    /// Two contexts, three actions (one free), single group: the instance
    /// where ranking by benefit per dollar is strictly suboptimal.
    fn counterexample() -> (Population, RewardMatrix) {
        let pop = Population::new(
            vec!["a0".into(), "a1".into(), "a2".into()],
            vec!["all".into()],
            vec![
                ContextSpec {
                    id: "x1".into(),
                    prob: 0.1,
                    group_ids: vec![0],
                    costs: vec![0.0, 10.0, 1.0],
                    features: None,
                    expected_rewards: None,
                },
                ContextSpec {
                    id: "x2".into(),
                    prob: 0.9,
                    group_ids: vec![0],
                    costs: vec![0.0, 10.0, 1.0],
                    features: None,
                    expected_rewards: None,
                },
            ],
        )
        .unwrap();
        let rewards = vec![vec![0.1, 0.6, 0.3], vec![0.1, 0.2, 0.12]];
        (pop, rewards)
    }

    fn plain_spec(budget: f64) -> UtilitySpec {
        UtilitySpec {
            reward: crate::population::RewardSpec::Matrix(vec![]),
            parity_weights: BTreeMap::new(),
            budget,
        }
    }

    #[test]
    fn counterexample_optimum_and_greedy_values() {
        let (pop, rewards) = counterexample();
        let spec = plain_spec(1.0);
        let (policy, value) = solve_policy(&pop, &rewards, &spec).unwrap();
        assert_abs_diff_eq!(value, 0.15, epsilon = 1e-9);
        assert_abs_diff_eq!(policy.prob(0, 1), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(policy.prob(1, 0), 1.0, epsilon = 1e-8);

        let (greedy, greedy_value) = greedy_per_dollar(&pop, &rewards, &spec).unwrap();
        assert_abs_diff_eq!(greedy_value, 0.138, epsilon = 1e-9);
        assert_abs_diff_eq!(greedy.prob(0, 2), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(greedy.prob(1, 2), 1.0, epsilon = 0.0);
    }

    #[test]
    fn counterexample_all_a2_utility() {
        let (pop, rewards) = counterexample();
        let spec = plain_spec(1.0);
        let all_a2 = Policy::constant(2, 3, 2);
        let u = utility(&all_a2, &pop, &rewards, &spec).unwrap();
        assert_abs_diff_eq!(u, 0.3 * 0.1 + 0.12 * 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(u, 0.138, epsilon = 1e-12);
    }

    #[test]
    fn zero_rewards_zero_weights_give_zero_utility() {
        let (pop, _) = counterexample();
        let rewards = vec![vec![0.0; 3]; 2];
        let spec = plain_spec(1.0);
        for policy in [
            Policy::constant(2, 3, 0),
            Policy::constant(2, 3, 2),
            Policy::uniform(2, 3),
        ] {
            assert_abs_diff_eq!(
                utility(&policy, &pop, &rewards, &spec).unwrap(),
                0.0,
                epsilon = 0.0
            );
        }
    }

    #[test]
    fn parity_term_hand_computed() {
        // Two equal-mass groups; policy spends $2 per capita on group A and
        // $0 on group B; lambda = 0.5 each. Overall spend = $1, so each
        // group deviates by $1 and the penalty is 0.5 * (1 + 1) = 1.0.
        let pop = Population::new(
            vec!["a0".into(), "a1".into()],
            vec!["ga".into(), "gb".into()],
            vec![
                ContextSpec {
                    id: "xa".into(),
                    prob: 0.5,
                    group_ids: vec![0],
                    costs: vec![0.0, 2.0],
                    features: None,
                    expected_rewards: None,
                },
                ContextSpec {
                    id: "xb".into(),
                    prob: 0.5,
                    group_ids: vec![1],
                    costs: vec![0.0, 2.0],
                    features: None,
                    expected_rewards: None,
                },
            ],
        )
        .unwrap();
        let rewards = vec![vec![0.3, 0.9], vec![0.3, 0.9]];
        let policy = Policy::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut spec = plain_spec(10.0);
        spec.parity_weights.insert("ga".into(), 0.5);
        spec.parity_weights.insert("gb".into(), 0.5);
        let reward_term = expected_reward(&policy, &pop, &rewards);
        let u = utility(&policy, &pop, &rewards, &spec).unwrap();
        assert_abs_diff_eq!(u, reward_term - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_mass_group_is_an_error() {
        let (pop, rewards) = counterexample();
        let mut spec = plain_spec(1.0);
        spec.parity_weights.insert("ghost".into(), 0.1);
        assert!(matches!(
            solve_policy(&pop, &rewards, &spec),
            Err(Error::UndefinedConditional { .. })
        ));
    }

    #[test]
    fn infeasible_budget_when_no_free_action() {
        let pop = Population::new(
            vec!["a0".into(), "a1".into()],
            vec!["all".into()],
            vec![ContextSpec {
                id: "x".into(),
                prob: 1.0,
                group_ids: vec![0],
                costs: vec![2.0, 3.0],
                features: None,
                expected_rewards: None,
            }],
        )
        .unwrap();
        let rewards = vec![vec![0.1, 0.9]];
        let spec = plain_spec(1.0);
        assert!(matches!(
            solve_policy(&pop, &rewards, &spec),
            Err(Error::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn non_binding_budget_selects_argmax_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(2..5);
            let k = rng.gen_range(2..4);
            let mut contexts = Vec::new();
            let mut probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = probs.iter().sum();
            for p in probs.iter_mut() {
                *p /= total;
            }
            let mut max_cost: f64 = 0.0;
            let mut rewards = Vec::new();
            for (i, &p) in probs.iter().enumerate() {
                let costs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..3.0)).collect();
                max_cost = costs.iter().fold(max_cost, |a, &b| a.max(b));
                contexts.push(ContextSpec {
                    id: format!("x{i}"),
                    prob: p,
                    group_ids: vec![0],
                    costs,
                    features: None,
                    expected_rewards: None,
                });
                rewards.push((0..k).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
            }
            let pop = Population::new(
                (0..k).map(|a| format!("a{a}")).collect(),
                vec!["all".into()],
                contexts,
            )
            .unwrap();
            let spec = plain_spec(max_cost + 1.0);
            let (policy, value) = solve_policy(&pop, &rewards, &spec).unwrap();
            let best: f64 = probs
                .iter()
                .zip(rewards.iter())
                .map(|(p, f)| p * f.iter().cloned().fold(f64::MIN, f64::max))
                .sum();
            assert_abs_diff_eq!(value, best, epsilon = 1e-8);
            for (x, f) in rewards.iter().enumerate() {
                let arg = f
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                // Rows concentrate on an argmax (unique maxima here w.p. 1).
                assert_abs_diff_eq!(policy.prob(x, arg), 1.0, epsilon = 1e-7);
            }
        }
    }

    /// Exhaustive 0.01-grid oracle over treat probabilities for a K=2
    /// instance; used to cross-check the LP on small random problems.
    fn grid_oracle_k2(
        pop: &Population,
        rewards: &RewardMatrix,
        spec: &UtilitySpec,
    ) -> f64 {
        let n = pop.n_contexts();
        let steps = 101;
        let mut best = f64::MIN;
        let mut idx = vec![0usize; n];
        loop {
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let p = i as f64 / (steps - 1) as f64;
                    vec![1.0 - p, p]
                })
                .collect();
            let policy = Policy { rows };
            if policy.expected_spend(pop) <= spec.budget + 1e-12 {
                let u = utility(&policy, pop, rewards, spec).unwrap();
                if u > best {
                    best = u;
                }
            }
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < steps {
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

    #[test]
    fn lp_matches_grid_oracle_on_three_context_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let probs = [0.2, 0.3, 0.5];
            let contexts = (0..3)
                .map(|i| ContextSpec {
                    id: format!("x{i}"),
                    prob: probs[i],
                    group_ids: vec![0],
                    costs: vec![0.0, 1.0],
                    features: None,
                    expected_rewards: None,
                })
                .collect();
            let pop = Population::new(
                vec!["a0".into(), "a1".into()],
                vec!["all".into()],
                contexts,
            )
            .unwrap();
            let rewards: RewardMatrix = (0..3)
                .map(|_| vec![rng.gen_range(0.0..0.5), rng.gen_range(0.0..1.0)])
                .collect();
            let spec = plain_spec(0.25);
            let (_, value) = solve_policy(&pop, &rewards, &spec).unwrap();
            let oracle = grid_oracle_k2(&pop, &rewards, &spec);
            assert!(
                (value - oracle).abs() < 1e-3 && value >= oracle - 1e-9,
                "trial {trial}: lp {value} vs grid {oracle}"
            );
        }
    }

    fn random_k2_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (Population, RewardMatrix, UtilitySpec) {
        let mut probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        let contexts = (0..n)
            .map(|i| ContextSpec {
                id: format!("x{i}"),
                prob: probs[i],
                group_ids: vec![i % 2],
                costs: vec![0.0, rng.gen_range(0.5..3.0)],
                features: None,
                expected_rewards: None,
            })
            .collect();
        let pop = Population::new(
            vec!["a0".into(), "a1".into()],
            vec!["g0".into(), "g1".into()],
            contexts,
        )
        .unwrap();
        let rewards: RewardMatrix = (0..n)
            .map(|_| {
                let f0 = rng.gen_range(0.0..0.4);
                vec![f0, f0 + rng.gen_range(0.01..0.6)]
            })
            .collect();
        let mut spec = plain_spec(rng.gen_range(0.2..1.2));
        let lam = rng.gen_range(0.0..0.3);
        spec.parity_weights.insert("g0".into(), lam);
        spec.parity_weights.insert("g1".into(), lam);
        (pop, rewards, spec)
    }

    #[test]
    fn threshold_extraction_preserves_spend_and_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let n = rng.gen_range(3..7);
            let (pop, rewards, spec) = random_k2_instance(&mut rng, n);
            // Random feasible policy.
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let p = rng.gen_range(0.0..1.0);
                    vec![1.0 - p, p]
                })
                .collect();
            let policy = Policy::new(rows).unwrap();
            let tp = extract_threshold(&policy, &pop, &rewards).unwrap();
            let materialized = tp.materialize(&pop, &rewards).unwrap();
            // Per-group spend preserved.
            for g in 0..2 {
                let s0 = policy.group_spend(&pop, g).unwrap();
                let s1 = materialized.group_spend(&pop, g).unwrap();
                assert_abs_diff_eq!(s0, s1, epsilon = 1e-9);
            }
            // Utility no worse.
            let u0 = utility(&policy, &pop, &rewards, &spec).unwrap();
            let u1 = utility(&materialized, &pop, &rewards, &spec).unwrap();
            assert!(u1 >= u0 - 1e-9, "trial {trial}: {u1} < {u0}");
        }
    }

    #[test]
    fn threshold_extraction_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..20 {
            let n = rng.gen_range(3..7);
            let (pop, rewards, _) = random_k2_instance(&mut rng, n);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let p = rng.gen_range(0.0..1.0);
                    vec![1.0 - p, p]
                })
                .collect();
            let first = extract_threshold(&Policy::new(rows).unwrap(), &pop, &rewards)
                .unwrap()
                .materialize(&pop, &rewards)
                .unwrap();
            let second = extract_threshold(&first, &pop, &rewards)
                .unwrap()
                .materialize(&pop, &rewards)
                .unwrap();
            for x in 0..n {
                assert_abs_diff_eq!(first.prob(x, 1), second.prob(x, 1), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn threshold_matches_lp_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = rng.gen_range(3..7);
            let (pop, rewards, spec) = random_k2_instance(&mut rng, n);
            let (lp_policy, lp_value) = solve_policy(&pop, &rewards, &spec).unwrap();
            let tp = extract_threshold(&lp_policy, &pop, &rewards).unwrap();
            let tp_value = utility(
                &tp.materialize(&pop, &rewards).unwrap(),
                &pop,
                &rewards,
                &spec,
            )
            .unwrap();
            assert!(
                (tp_value - lp_value).abs() < 1e-6,
                "trial {trial}: threshold {tp_value} vs lp {lp_value}"
            );
        }
    }

    #[test]
    fn threshold_preconditions_reported() {
        let (pop, rewards) = counterexample();
        let policy = Policy::uniform(2, 3);
        let err = extract_threshold(&policy, &pop, &rewards).unwrap_err();
        match err {
            Error::ThresholdNotApplicable { condition } => {
                assert!(condition.contains("2 actions"), "{condition}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_bound_trivial_cases() {
        let (pop, rewards) = counterexample();
        let spec = plain_spec(1.0);
        let b = utility_gap_bound(&pop, &rewards, &rewards, &spec).unwrap();
        assert_abs_diff_eq!(b.gap, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.weighted_bound, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.uniform_bound, 0.0, epsilon = 1e-12);

        let shifted: RewardMatrix = rewards
            .iter()
            .map(|row| row.iter().map(|v| v + 0.07).collect())
            .collect();
        let b = utility_gap_bound(&pop, &rewards, &shifted, &spec).unwrap();
        assert_abs_diff_eq!(b.uniform_bound, 0.14, epsilon = 1e-12);
        assert!(b.gap <= 0.14 + 1e-9);
    }

    #[test]
    fn lp_utility_monotone_in_parity_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (pop, rewards, mut spec) = random_k2_instance(&mut rng, 4);
            let mut last = f64::INFINITY;
            for lam in [0.0, 0.05, 0.2, 0.8] {
                spec.parity_weights.insert("g0".into(), lam);
                spec.parity_weights.insert("g1".into(), lam);
                let (_, value) = solve_policy(&pop, &rewards, &spec).unwrap();
                assert!(value <= last + 1e-9);
                last = value;
            }
        }
    }

    #[test]
    fn budget_feasibility_of_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..50 {
            let (pop, rewards, spec) = random_k2_instance(&mut rng, 5);
            let (policy, _) = solve_policy(&pop, &rewards, &spec).unwrap();
            assert!(policy.expected_spend(&pop) <= spec.budget + 1e-8);
        }
    }
}
