//! Online policy learning under a budget.
//!
//! Each arriving individual is handled by refitting the reward model on the
//! data so far, turning it into expected rewards per the learner (plug-in
//! point estimate, posterior draw, or upper posterior percentile), solving
//! the policy LP on a discretized candidate population under a
//! controller-adjusted nominal budget, and acting through the
//! nearest-neighbor extension of the solved policy. Baselines: a
//! never-stopping randomized allocation, its explore-first variant, and an
//! oracle that knows the true expected rewards.
//!
//! Replications are independent: each derives its own RNG streams from
//! `(seed, rep)`, and arrivals and latent outcome draws use a stream
//! separate from method decisions, so different methods and parity weights
//! see identical individuals at the same seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::ContextSampler;
use crate::error::{Error, Result};
use crate::estimators::{fit_linear, fit_logistic_packed, fit_tabular, Dataset, FittedModel, LinearOptions, Record};
use crate::policy::{parity_penalty, solve_policy, utility, Policy};
use crate::population::{OutcomeModel, Population, RewardMatrix, RewardSpec, UtilitySpec};

/// Learning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Randomized allocation for the whole run.
    Rct,
    /// Randomized allocation until `stop_n`, then the policy learned there.
    RctStopAtN,
    /// Plug-in policy, with probability `epsilon` a randomized action.
    EGreedy,
    Thompson,
    Ucb,
    /// Acts on the true expected rewards.
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rct => "rct",
            Method::RctStopAtN => "rct_stop_at_n",
            Method::EGreedy => "egreedy",
            Method::Thompson => "thompson",
            Method::Ucb => "ucb",
            Method::Oracle => "oracle",
        }
    }
}

/// Which reward-model family the learner fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tabular,
    Linear,
    Logistic,
}

/// Warm-up specification: length and group-composition requirements.
/// The warm-up batch is resampled until every named group appears.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WarmupSpec {
    pub len: usize,
    pub require_groups: Vec<String>,
}

/// Learner configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub method: Method,
    pub model: ModelKind,
    /// Exploration rate for epsilon-greedy.
    pub epsilon: f64,
    /// Posterior percentile for UCB.
    pub ucb_percentile: f64,
    pub warmup: WarmupSpec,
    /// Switch point for the explore-first baseline.
    pub stop_n: Option<usize>,
    /// Gaussian prior precision for the logistic fit.
    pub prior_precision: f64,
    /// Prior mean for unobserved tabular cells.
    pub prior_mean: f64,
    /// Size of the discretized candidate set the LP runs on; when it is at
    /// least the population size the full support is used.
    pub candidate_size: usize,
    /// Record a learned-policy snapshot every this many steps (and at the
    /// final step). Zero disables intermediate snapshots.
    pub snapshot_every: usize,
    /// Keep the snapshot policies themselves, not just their utilities.
    pub store_policies: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            method: Method::Thompson,
            model: ModelKind::Logistic,
            epsilon: 0.1,
            ucb_percentile: 0.975,
            warmup: WarmupSpec {
                len: 4,
                require_groups: Vec::new(),
            },
            stop_n: None,
            prior_precision: 1.0 / (2.5 * 2.5),
            prior_mean: 0.5,
            candidate_size: 1000,
            snapshot_every: 50,
            store_policies: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                requirement: "must lie in [0, 1]",
            });
        }
        if !(self.ucb_percentile > 0.0 && self.ucb_percentile < 1.0) {
            return Err(Error::InvalidParameter {
                name: "ucb_percentile",
                value: self.ucb_percentile,
                requirement: "must lie in (0, 1)",
            });
        }
        if self.warmup.len > n {
            return Err(Error::InvalidParameter {
                name: "warmup",
                value: self.warmup.len as f64,
                requirement: "must not exceed the horizon",
            });
        }
        if self.method == Method::RctStopAtN && self.stop_n.is_none() {
            return Err(Error::InvalidParameter {
                name: "stop_n",
                value: f64::NAN,
                requirement: "required for the explore-first baseline",
            });
        }
        if self.candidate_size == 0 {
            return Err(Error::InvalidParameter {
                name: "candidate_size",
                value: 0.0,
                requirement: "must be positive",
            });
        }
        Ok(())
    }
}

/// Running budget state: target per-capita budget, cumulative spend, and
/// how many budget-relevant individuals have been seen.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BudgetTracker {
    pub target: f64,
    pub spent: f64,
    pub seen: usize,
}

impl BudgetTracker {
    pub fn new(target: f64) -> Self {
        BudgetTracker {
            target,
            spent: 0.0,
            seen: 0,
        }
    }

    pub fn record(&mut self, cost: f64) {
        self.spent += cost;
        self.seen += 1;
    }
}

/// Controller-adjusted nominal budget
/// `b* = b * (b * (i - 1)) / sum_{j < i} c_j`, which shrinks when past
/// spending ran over target and grows when it ran under. Returns the target
/// itself while nothing has been spent, and clamps to `[b/10, 10 b]` since
/// the raw ratio is unbounded.
pub fn adjust_budget(tracker: &BudgetTracker) -> f64 {
    let b = tracker.target;
    if tracker.spent <= 0.0 || tracker.seen == 0 || b <= 0.0 {
        return b;
    }
    let nominal = b * (b * tracker.seen as f64) / tracker.spent;
    nominal.clamp(b / 10.0, 10.0 * b)
}

/// The fraction of individuals that can be offered a uniformly random
/// action while meeting the budget in expectation:
/// `p = min(1, b / c_bar)` with `c_bar` the expected cost of a uniformly
/// random action. The remaining `1 - p` receive the no-cost action.
pub fn random_allocation_fraction(pop: &Population, budget: f64) -> f64 {
    if budget <= 0.0 {
        return 0.0;
    }
    let k = pop.n_actions() as f64;
    let mean_cost: f64 = pop
        .contexts
        .iter()
        .map(|c| c.prob * c.costs.iter().sum::<f64>())
        .sum::<f64>()
        / k;
    if mean_cost <= 0.0 {
        return 1.0;
    }
    (budget / mean_cost).min(1.0)
}

/// Nearest candidate by cost-normalized estimated rewards, restricted to
/// candidates with the same group memberships. Coordinates where either
/// side's action cost is zero are dropped from the distance: a free action
/// never competes for budget, and the normalization is undefined there.
/// Ties break toward the lowest candidate index.
pub fn nearest_neighbor(
    pop: &Population,
    rewards: &RewardMatrix,
    candidates: &[usize],
    x: usize,
) -> Result<usize> {
    let query_groups = &pop.contexts[x].group_ids;
    let mut best: Option<(f64, usize)> = None;
    for &c in candidates {
        if &pop.contexts[c].group_ids != query_groups {
            continue;
        }
        let dist = normalized_distance(
            &pop.contexts[x].costs,
            &rewards[x],
            &pop.contexts[c].costs,
            &rewards[c],
        );
        let better = match best {
            None => true,
            Some((d, i)) => dist < d || (dist == d && c < i),
        };
        if better {
            best = Some((dist, c));
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| Error::NoSameGroupCandidate {
        context: pop.contexts[x].id.clone(),
    })
}

fn normalized_distance(
    query_costs: &[f64],
    query_rewards: &[f64],
    cand_costs: &[f64],
    cand_rewards: &[f64],
) -> f64 {
    let mut sum = 0.0;
    for k in 0..query_costs.len() {
        if query_costs[k] > 0.0 && cand_costs[k] > 0.0 {
            let diff = cand_rewards[k] / cand_costs[k] - query_rewards[k] / query_costs[k];
            sum += diff * diff;
        }
    }
    sum.sqrt()
}

/// One step of a replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub rep: u32,
    /// 1-based step index.
    pub step: usize,
    /// Context index in the full population.
    pub context: usize,
    pub action: usize,
    pub outcome: f64,
    pub cost: f64,
    pub nominal_budget: f64,
    /// Realized reward minus the acting policy's parity-penalty rate.
    pub realized_utility: f64,
    /// Counterfactual utility of the oracle policy on the same individual
    /// and latent draw.
    pub oracle_utility: f64,
    pub warmup: bool,
    /// The per-step LP was infeasible and the step fell back to the no-cost
    /// action.
    pub lp_fallback: bool,
}

/// Learned-policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub step: usize,
    /// Utility of the policy learned from data available at this step,
    /// evaluated on the candidate population under the true rewards.
    pub learned_utility: f64,
    pub policy: Option<Policy>,
}

/// One replication's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepTrace {
    pub rep: u32,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<PolicySnapshot>,
    /// `U(pi*)` on this replication's candidate population, true rewards.
    pub oracle_utility: f64,
    /// `U(all no-cost action)` on the candidate population.
    pub no_treatment_utility: f64,
    /// Mean realized spend per post-warmup individual.
    pub mean_spend: f64,
    /// Mean realized spend per post-warmup individual, by group index.
    pub group_mean_spend: Vec<f64>,
    /// Fits that failed to converge and reused the previous model.
    pub fit_failures: usize,
}

/// Full experiment output: one trace per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTrace {
    pub method: Method,
    pub n: usize,
    pub reps: Vec<RepTrace>,
}

/// Row-major feature matrix and outcome vector mirroring the dataset, so
/// per-step logistic fits avoid per-record indirection.
struct PackedRecords {
    features: Vec<f64>,
    outcomes: Vec<f64>,
    dim: usize,
}

struct CandidateSet {
    pop: Population,
    /// Full-population context index per candidate.
    globals: Vec<usize>,
}

fn draw_candidates(pop: &Population, size: usize, rng: &mut impl Rng) -> CandidateSet {
    if size >= pop.n_contexts() {
        return CandidateSet {
            pop: pop.clone(),
            globals: (0..pop.n_contexts()).collect(),
        };
    }
    let sampler = ContextSampler::new(pop);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..size {
        *counts.entry(sampler.sample(rng)).or_insert(0usize) += 1;
    }
    let mut contexts = Vec::with_capacity(counts.len());
    let mut globals = Vec::with_capacity(counts.len());
    for (&g, &c) in &counts {
        let mut ctx = pop.contexts[g].clone();
        ctx.prob = c as f64 / size as f64;
        contexts.push(ctx);
        globals.push(g);
    }
    let cand = Population {
        actions: pop.actions.clone(),
        groups: pop.groups.clone(),
        contexts,
    };
    CandidateSet { pop: cand, globals }
}

/// Runs the adaptive experiment: `reps` independent replications of `n`
/// sequential decisions against the ground-truth outcome model. The utility
/// spec supplies the reward function, parity weights, and target budget.
/// Everything is a pure function of `(inputs, seed)`.
pub fn run_experiment(
    pop: &Population,
    model: &OutcomeModel,
    spec: &UtilitySpec,
    cfg: &LearnerConfig,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<ExperimentTrace> {
    cfg.validate(n)?;
    spec.validate()?;
    let reward_fn = match &spec.reward {
        RewardSpec::Function(f) => f.clone(),
        RewardSpec::Matrix(_) => {
            return Err(Error::InvalidParameter {
                name: "reward",
                value: f64::NAN,
                requirement: "experiments need a reward function to score realized outcomes",
            })
        }
    };
    let truth = crate::population::expected_rewards(pop, &reward_fn, model)?;
    for name in &cfg.warmup.require_groups {
        if pop.group_index(name).is_none() {
            return Err(Error::UndefinedConditional {
                group: name.clone(),
            });
        }
    }

    let rep_traces: Result<Vec<RepTrace>> = (0..reps as u32)
        .into_par_iter()
        .map(|rep| run_replication(pop, model, spec, cfg, &reward_fn, &truth, n, rep, seed))
        .collect();
    Ok(ExperimentTrace {
        method: cfg.method,
        n,
        reps: rep_traces?,
    })
}

/// RNG stream channels per replication.
const CH_SETUP: u64 = 0;
const CH_WORLD: u64 = 1;
const CH_METHOD: u64 = 2;
const CH_ORACLE: u64 = 3;

fn channel_rng(seed: u64, rep: u32, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 * 4 + channel);
    rng
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    pop: &Population,
    model: &OutcomeModel,
    spec: &UtilitySpec,
    cfg: &LearnerConfig,
    reward_fn: &crate::population::RewardFunction,
    truth: &RewardMatrix,
    n: usize,
    rep: u32,
    seed: u64,
) -> Result<RepTrace> {
    let mut setup_rng = channel_rng(seed, rep, CH_SETUP);
    let mut world_rng = channel_rng(seed, rep, CH_WORLD);
    let mut method_rng = channel_rng(seed, rep, CH_METHOD);
    let mut oracle_rng = channel_rng(seed, rep, CH_ORACLE);

    let cand = draw_candidates(pop, cfg.candidate_size, &mut setup_rng);
    let cand_truth: RewardMatrix = cand.globals.iter().map(|&g| truth[g].clone()).collect();

    // Oracle policy and fixed utilities on the candidate population.
    let (oracle_policy, oracle_utility) = solve_policy(&cand.pop, &cand_truth, spec)?;
    let oracle_penalty = parity_penalty(&oracle_policy, &cand.pop, spec)?;
    let no_treatment = Policy::constant(cand.pop.n_contexts(), cand.pop.n_actions(), 0);
    let no_treatment_utility = utility(&no_treatment, &cand.pop, &cand_truth, spec)?;

    let sampler = ContextSampler::new(pop);
    let k = pop.n_actions();

    // Warm-up group: resample until the composition constraint holds.
    let warm_len = cfg.warmup.len.min(n);
    let required: Vec<usize> = cfg
        .warmup
        .require_groups
        .iter()
        .map(|g| pop.group_index(g).expect("validated"))
        .collect();
    let warm_contexts: Vec<usize> = {
        let mut attempt = 0;
        loop {
            let batch: Vec<usize> = (0..warm_len).map(|_| sampler.sample(&mut setup_rng)).collect();
            let ok = required.iter().all(|g| {
                batch
                    .iter()
                    .any(|&x| pop.contexts[x].group_ids.contains(g))
            });
            if ok || warm_len == 0 {
                break batch;
            }
            attempt += 1;
            if attempt > 10_000 {
                return Err(Error::InvalidPopulation(
                    "warm-up composition constraint unsatisfiable".into(),
                ));
            }
        }
    };

    let mut data = Dataset {
        records: Vec::with_capacity(n),
        method: cfg.method.name().into(),
        rep,
    };
    let feat_dim = pop.feature_dim().unwrap_or(0);
    let mut packed = PackedRecords {
        features: Vec::with_capacity(n * feat_dim),
        outcomes: Vec::with_capacity(n),
        dim: feat_dim,
    };
    let mut tracker = BudgetTracker::new(spec.budget);
    let mut records = Vec::with_capacity(n);
    let mut snapshots = Vec::new();
    let mut fit_failures = 0usize;
    let mut prev_theta: Option<Vec<f64>> = None;
    let mut prev_fit: Option<FittedModel> = None;
    let mut frozen: Option<(Policy, RewardMatrix, ResolvedEstimate)> = None;
    let mut group_spend = vec![0.0; pop.groups.len()];
    let mut group_count = vec![0usize; pop.groups.len()];
    let mut spend_total = 0.0;
    let mut spend_count = 0usize;

    for step in 1..=n {
        let is_warmup = step <= warm_len;
        // World draws happen for every step in a fixed order so that runs
        // with different methods or parity weights see identical arrivals
        // and latent outcomes at the same seed.
        let x = if is_warmup {
            warm_contexts[step - 1]
        } else {
            sampler.sample(&mut world_rng)
        };
        let latent = model_latent(model, &mut world_rng);

        let mut lp_fallback = false;
        let nominal = adjust_budget(&tracker);
        let (action, acting_penalty) = if is_warmup {
            // First individuals cover the costly actions, the rest control.
            let a = if step < k { step } else { 0 };
            (a, 0.0)
        } else {
            match cfg.method {
                Method::Oracle => {
                    let a = sample_extended(
                        pop,
                        &cand,
                        &cand_truth,
                        truth,
                        &oracle_policy,
                        x,
                        &mut method_rng,
                    );
                    (a, oracle_penalty)
                }
                Method::Rct => {
                    random_allocation_step(&cand.pop, pop, nominal, x, spec, &mut method_rng)?
                }
                Method::RctStopAtN => {
                    let stop = cfg.stop_n.expect("validated");
                    if step <= stop {
                        let out = random_allocation_step(
                            &cand.pop,
                            pop,
                            nominal,
                            x,
                            spec,
                            &mut method_rng,
                        )?;
                        if step == stop {
                            let fitted = fit_current(
                                cfg,
                                &data,
                                &packed,
                                pop,
                                &mut prev_theta,
                                &mut prev_fit,
                                &mut fit_failures,
                            )?;
                            let resolved = ResolvedEstimate::resolve(
                                &fitted,
                                EstimateKind::Point,
                                pop,
                                &mut method_rng,
                            )?;
                            let est = resolved.candidate_matrix(&cand)?;
                            let policy = match solve_policy(&cand.pop, &est, spec) {
                                Ok((p, _)) => p,
                                Err(Error::InfeasibleBudget { .. }) => no_treatment.clone(),
                                Err(e) => return Err(e),
                            };
                            frozen = Some((policy, est, resolved));
                        }
                        out
                    } else {
                        let (policy, est, resolved) = frozen.as_ref().expect("frozen at stop");
                        let penalty = parity_penalty(policy, &cand.pop, spec)?;
                        let query = resolved.row(pop, x)?;
                        let a = sample_extended_rows(
                            pop,
                            &cand,
                            est,
                            &query,
                            policy,
                            x,
                            &mut method_rng,
                        );
                        (a, penalty)
                    }
                }
                Method::EGreedy | Method::Thompson | Method::Ucb => {
                    let explore =
                        cfg.method == Method::EGreedy && method_rng.gen::<f64>() < cfg.epsilon;
                    if explore {
                        random_allocation_step(&cand.pop, pop, nominal, x, spec, &mut method_rng)?
                    } else {
                        let fitted = fit_current(
                            cfg,
                            &data,
                            &packed,
                            pop,
                            &mut prev_theta,
                            &mut prev_fit,
                            &mut fit_failures,
                        )?;
                        let kind = match cfg.method {
                            Method::EGreedy => EstimateKind::Point,
                            Method::Thompson => EstimateKind::Draw,
                            Method::Ucb => EstimateKind::Optimistic(cfg.ucb_percentile),
                            _ => unreachable!(),
                        };
                        let resolved =
                            ResolvedEstimate::resolve(&fitted, kind, pop, &mut method_rng)?;
                        let est = resolved.candidate_matrix(&cand)?;
                        let spec_i = UtilitySpec {
                            budget: nominal,
                            ..spec.clone()
                        };
                        match solve_policy(&cand.pop, &est, &spec_i) {
                            Ok((policy, _)) => {
                                let penalty = parity_penalty(&policy, &cand.pop, spec)?;
                                let query = resolved.row(pop, x)?;
                                let a = sample_extended_rows(
                                    pop,
                                    &cand,
                                    &est,
                                    &query,
                                    &policy,
                                    x,
                                    &mut method_rng,
                                );
                                (a, penalty)
                            }
                            Err(Error::InfeasibleBudget { .. }) => {
                                lp_fallback = true;
                                (0, 0.0)
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        };

        let outcome = model.outcome_given_latent(pop, x, action, latent)?;
        let cost = pop.contexts[x].costs[action];
        let realized_reward = reward_fn.value(pop, x, action, outcome)?;
        let realized_utility = realized_reward - acting_penalty;

        // Oracle counterfactual on the same individual and latent draw.
        let oracle_action = sample_extended(
            pop,
            &cand,
            &cand_truth,
            truth,
            &oracle_policy,
            x,
            &mut oracle_rng,
        );
        let oracle_outcome = model.outcome_given_latent(pop, x, oracle_action, latent)?;
        let oracle_step_utility =
            reward_fn.value(pop, x, oracle_action, oracle_outcome)? - oracle_penalty;

        if !is_warmup {
            tracker.record(cost);
            spend_total += cost;
            spend_count += 1;
            for &g in &pop.contexts[x].group_ids {
                group_spend[g] += cost;
                group_count[g] += 1;
            }
        }
        data.records.push(Record {
            iter: step,
            context: x,
            action,
            outcome,
            cost,
        });
        if feat_dim > 0 {
            packed.features.extend_from_slice(pop.feature(x, action)?);
            packed.outcomes.push(outcome);
        }
        records.push(StepRecord {
            rep,
            step,
            context: x,
            action,
            outcome,
            cost,
            nominal_budget: nominal,
            realized_utility,
            oracle_utility: oracle_step_utility,
            warmup: is_warmup,
            lp_fallback,
        });

        // Learned-policy snapshot: always from the plug-in point estimate.
        let at_snapshot =
            (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0) || step == n;
        if at_snapshot && !is_warmup {
            let learned = if cfg.method == Method::Oracle {
                oracle_policy.clone()
            } else if let Some((policy, _, _)) = frozen.as_ref() {
                policy.clone()
            } else {
                let fitted = fit_current(
                    cfg,
                    &data,
                    &packed,
                    pop,
                    &mut prev_theta,
                    &mut prev_fit,
                    &mut fit_failures,
                )?;
                let resolved =
                    ResolvedEstimate::resolve(&fitted, EstimateKind::Point, pop, &mut method_rng)?;
                let est = resolved.candidate_matrix(&cand)?;
                match solve_policy(&cand.pop, &est, spec) {
                    Ok((p, _)) => p,
                    Err(Error::InfeasibleBudget { .. }) => no_treatment.clone(),
                    Err(e) => return Err(e),
                }
            };
            let learned_utility = utility(&learned, &cand.pop, &cand_truth, spec)?;
            snapshots.push(PolicySnapshot {
                step,
                learned_utility,
                policy: cfg.store_policies.then_some(learned),
            });
        }
    }

    let group_mean_spend = group_spend
        .iter()
        .zip(group_count.iter())
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(RepTrace {
        rep,
        records,
        snapshots,
        oracle_utility,
        no_treatment_utility,
        mean_spend: if spend_count > 0 {
            spend_total / spend_count as f64
        } else {
            0.0
        },
        group_mean_spend,
        fit_failures,
    })
}

fn model_latent(model: &OutcomeModel, rng: &mut impl Rng) -> f64 {
    use rand_distr::Distribution;
    if model.is_binary() {
        rng.gen()
    } else {
        rand_distr::StandardNormal.sample(rng)
    }
}

#[derive(Clone, Copy)]
enum EstimateKind {
    Point,
    Draw,
    Optimistic(f64),
}

/// An estimate with all randomness resolved, so the LP matrix and the
/// arriving individual's query row come from the same parameters (one
/// Thompson draw serves both).
#[derive(Clone)]
enum ResolvedEstimate {
    /// Full-population reward table (tabular fits).
    Table(RewardMatrix),
    /// Fixed coefficients, optionally mapped through the inverse logit.
    Coefficients { theta: Vec<f64>, logistic: bool },
    /// Upper posterior percentile of a parametric fit.
    Optimistic { fit: FittedModel, alpha: f64 },
}

impl ResolvedEstimate {
    fn resolve(fitted: &FittedModel, kind: EstimateKind, pop: &Population, rng: &mut impl Rng) -> Result<Self> {
        Ok(match (fitted, kind) {
            (FittedModel::Tabular(_), EstimateKind::Point) => {
                ResolvedEstimate::Table(fitted.point_rewards(pop)?)
            }
            (FittedModel::Tabular(_), EstimateKind::Draw) => {
                ResolvedEstimate::Table(fitted.draw_rewards(pop, rng)?)
            }
            (FittedModel::Tabular(_), EstimateKind::Optimistic(alpha)) => {
                ResolvedEstimate::Table(fitted.optimistic_rewards(pop, alpha)?)
            }
            (_, EstimateKind::Point) => ResolvedEstimate::Coefficients {
                theta: fitted
                    .as_parametric()
                    .expect("parametric fit")
                    .theta
                    .iter()
                    .cloned()
                    .collect(),
                logistic: matches!(fitted, FittedModel::Logistic(_)),
            },
            (_, EstimateKind::Draw) => ResolvedEstimate::Coefficients {
                theta: fitted.posterior_draw(rng).expect("parametric fit"),
                logistic: matches!(fitted, FittedModel::Logistic(_)),
            },
            (_, EstimateKind::Optimistic(alpha)) => ResolvedEstimate::Optimistic {
                fit: fitted.clone(),
                alpha,
            },
        })
    }

    /// Estimated rewards for one context of `pop`.
    fn row(&self, pop: &Population, x: usize) -> Result<Vec<f64>> {
        match self {
            ResolvedEstimate::Table(m) => Ok(m[x].clone()),
            ResolvedEstimate::Coefficients { theta, logistic } => {
                let mut row = Vec::with_capacity(pop.n_actions());
                for a in 0..pop.n_actions() {
                    let phi = pop.feature(x, a)?;
                    let z: f64 = phi.iter().zip(theta.iter()).map(|(u, v)| u * v).sum();
                    row.push(if *logistic {
                        crate::population::logistic(z)
                    } else {
                        z
                    });
                }
                Ok(row)
            }
            ResolvedEstimate::Optimistic { fit, alpha } => {
                let mut row = Vec::with_capacity(pop.n_actions());
                for a in 0..pop.n_actions() {
                    row.push(fit.optimistic_estimate(pop, *alpha, x, a)?);
                }
                Ok(row)
            }
        }
    }

    /// Estimated rewards for the candidate population. Tabular estimates
    /// are indexed by the candidates' global context indices; parametric
    /// estimates evaluate the candidates' own features.
    fn candidate_matrix(&self, cand: &CandidateSet) -> Result<RewardMatrix> {
        match self {
            ResolvedEstimate::Table(m) => {
                Ok(cand.globals.iter().map(|&g| m[g].clone()).collect())
            }
            _ => (0..cand.pop.n_contexts())
                .map(|ci| self.row(&cand.pop, ci))
                .collect(),
        }
    }
}

/// Fits the configured model on the data so far, reusing the previous fit
/// when the optimizer fails to converge. Logistic fits run on the packed
/// feature/outcome arrays the loop maintains incrementally.
#[allow(clippy::too_many_arguments)]
fn fit_current(
    cfg: &LearnerConfig,
    data: &Dataset,
    packed: &PackedRecords,
    pop: &Population,
    prev_theta: &mut Option<Vec<f64>>,
    prev_fit: &mut Option<FittedModel>,
    fit_failures: &mut usize,
) -> Result<FittedModel> {
    let fitted = match cfg.model {
        ModelKind::Tabular => fit_tabular(data, pop.n_contexts(), pop.n_actions(), cfg.prior_mean),
        ModelKind::Linear => fit_linear(data, pop, LinearOptions::default()),
        ModelKind::Logistic => fit_logistic_packed(
            &packed.features,
            &packed.outcomes,
            packed.dim,
            cfg.prior_precision,
            prev_theta.as_deref(),
        ),
    };
    match fitted {
        Ok(fit) => {
            if let Some(p) = fit.as_parametric() {
                *prev_theta = Some(p.theta.iter().cloned().collect());
            }
            *prev_fit = Some(fit.clone());
            Ok(fit)
        }
        Err(Error::NonConvergence { last_iterate, .. }) => {
            *fit_failures += 1;
            match prev_fit.as_ref() {
                Some(f) => Ok(f.clone()),
                None => {
                    *prev_theta = Some(last_iterate);
                    Err(Error::NumericalFailure {
                        what: "first fit failed to converge".into(),
                    })
                }
            }
        }
        Err(e) => Err(e),
    }
}

/// Draws an action for full-population context `x` from the candidate
/// policy extended by nearest neighbor, where the query row of estimated
/// rewards is looked up in the full matrix.
fn sample_extended(
    pop: &Population,
    cand: &CandidateSet,
    cand_rewards: &RewardMatrix,
    full_rewards: &RewardMatrix,
    policy: &Policy,
    x: usize,
    rng: &mut impl Rng,
) -> usize {
    sample_extended_rows(pop, cand, cand_rewards, &full_rewards[x], policy, x, rng)
}

fn sample_extended_rows(
    pop: &Population,
    cand: &CandidateSet,
    cand_rewards: &RewardMatrix,
    query_rewards: &[f64],
    policy: &Policy,
    x: usize,
    rng: &mut impl Rng,
) -> usize {
    let query_groups = &pop.contexts[x].group_ids;
    let mut best: Option<(f64, usize)> = None;
    for (ci, &g) in cand.globals.iter().enumerate() {
        if &pop.contexts[g].group_ids != query_groups {
            continue;
        }
        let dist = normalized_distance(
            &pop.contexts[x].costs,
            query_rewards,
            &cand.pop.contexts[ci].costs,
            &cand_rewards[ci],
        );
        let better = match best {
            None => true,
            Some((d, _)) => dist < d,
        };
        if better {
            best = Some((dist, ci));
        }
    }
    // Fall back to the nearest candidate regardless of group when no
    // candidate shares the query's memberships.
    let row = match best {
        Some((_, ci)) => ci,
        None => {
            let mut fallback = (f64::INFINITY, 0usize);
            for (ci, _) in cand.globals.iter().enumerate() {
                let dist = normalized_distance(
                    &pop.contexts[x].costs,
                    query_rewards,
                    &cand.pop.contexts[ci].costs,
                    &cand_rewards[ci],
                );
                if dist < fallback.0 {
                    fallback = (dist, ci);
                }
            }
            fallback.1
        }
    };
    sample_action(&policy.rows[row], rng)
}

fn sample_action(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    row.len() - 1
}

/// Randomized-allocation step: with probability `p` (set to meet the
/// nominal budget in expectation) a uniformly random action, otherwise the
/// no-cost action. Returns the action and the acting policy's parity rate.
fn random_allocation_step(
    cand_pop: &Population,
    pop: &Population,
    nominal: f64,
    x: usize,
    spec: &UtilitySpec,
    rng: &mut impl Rng,
) -> Result<(usize, f64)> {
    let k = pop.n_actions();
    let p = random_allocation_fraction(cand_pop, nominal);
    let acting = {
        let mut row = vec![p / k as f64; k];
        row[0] += 1.0 - p;
        Policy {
            rows: vec![row; cand_pop.n_contexts()],
        }
    };
    let penalty = parity_penalty(&acting, cand_pop, spec)?;
    let a = if rng.gen::<f64>() < p {
        rng.gen_range(0..k)
    } else {
        0
    };
    let _ = x;
    Ok((a, penalty))
}

/// Aggregate metrics of an experiment trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub n_reps: usize,
    /// Mean cumulative regret (oracle minus realized utility) per step,
    /// with its standard error across replications.
    pub regret_curve: Vec<CurvePoint>,
    /// Percent-of-optimal of the learned policy at each snapshot step.
    pub pct_of_optimal: Vec<CurvePoint>,
    /// Per-group mean spend and its disparity against the target budget.
    pub group_spend: Vec<GroupSpendSummary>,
    /// Mean realized per-person spend across replications.
    pub mean_spend: f64,
    /// Per-replication scalars for paired comparisons.
    pub per_rep: Vec<RepScalars>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpendSummary {
    pub group: String,
    pub mean_spend: f64,
    /// `mean_spend - target budget`.
    pub disparity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepScalars {
    pub rep: u32,
    pub final_cumulative_regret: f64,
    pub final_pct_of_optimal: f64,
    pub mean_spend: f64,
    pub group_mean_spend: Vec<f64>,
}

/// Summarizes a trace: regret curves, percent-of-optimal at snapshots,
/// per-group spend, and budget adherence.
pub fn summarize(trace: &ExperimentTrace, pop: &Population, target_budget: f64) -> Result<Summary> {
    if trace.reps.is_empty() || trace.reps.iter().any(|r| r.records.is_empty()) {
        return Err(Error::EmptyTrace);
    }
    let n = trace.n;
    let n_reps = trace.reps.len();

    // Per-step cumulative regret, mean and SE across replications.
    let mut sum = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    for rep in &trace.reps {
        let mut cum = 0.0;
        for (i, rec) in rep.records.iter().enumerate() {
            cum += rec.oracle_utility - rec.realized_utility;
            sum[i] += cum;
            sumsq[i] += cum * cum;
        }
    }
    let sample_se = |s: f64, s2: f64| -> (f64, f64) {
        let n = n_reps as f64;
        let mean = s / n;
        if n_reps < 2 {
            return (mean, 0.0);
        }
        let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    };
    let regret_curve = (0..n)
        .map(|i| {
            let (mean, se) = sample_se(sum[i], sumsq[i]);
            CurvePoint {
                step: i + 1,
                mean,
                se,
            }
        })
        .collect();

    // Percent-of-optimal at shared snapshot steps.
    let steps: Vec<usize> = trace.reps[0].snapshots.iter().map(|s| s.step).collect();
    let mut pct_of_optimal = Vec::with_capacity(steps.len());
    let mut final_pcts = vec![0.0; n_reps];
    for (si, &step) in steps.iter().enumerate() {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (ri, rep) in trace.reps.iter().enumerate() {
            let denom = rep.oracle_utility - rep.no_treatment_utility;
            if denom.abs() < 1e-12 {
                return Err(Error::PctOfOptimalUndefined);
            }
            let snap = &rep.snapshots[si];
            let pct = (snap.learned_utility - rep.no_treatment_utility) / denom * 100.0;
            s += pct;
            s2 += pct * pct;
            if si == steps.len() - 1 {
                final_pcts[ri] = pct;
            }
        }
        let (mean, se) = sample_se(s, s2);
        pct_of_optimal.push(CurvePoint { step, mean, se });
    }

    let mut group_spend = Vec::with_capacity(pop.groups.len());
    for (g, name) in pop.groups.iter().enumerate() {
        let mean = trace
            .reps
            .iter()
            .map(|r| r.group_mean_spend[g])
            .sum::<f64>()
            / n_reps as f64;
        group_spend.push(GroupSpendSummary {
            group: name.clone(),
            mean_spend: mean,
            disparity: mean - target_budget,
        });
    }
    let mean_spend = trace.reps.iter().map(|r| r.mean_spend).sum::<f64>() / n_reps as f64;

    let per_rep = trace
        .reps
        .iter()
        .enumerate()
        .map(|(ri, rep)| RepScalars {
            rep: rep.rep,
            final_cumulative_regret: rep
                .records
                .iter()
                .map(|r| r.oracle_utility - r.realized_utility)
                .sum(),
            final_pct_of_optimal: final_pcts[ri],
            mean_spend: rep.mean_spend,
            group_mean_spend: rep.group_mean_spend.clone(),
        })
        .collect();

    Ok(Summary {
        method: trace.method,
        n_reps,
        regret_curve,
        pct_of_optimal,
        group_spend,
        mean_spend,
        per_rep,
    })
}
