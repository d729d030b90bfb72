//! Discrete decision problems: contexts, groups, costs, outcome models, and
//! reward specifications.
//!
//! A [`Population`] is a finite distribution over contexts. Each context
//! carries group memberships, a per-action cost vector, and optionally
//! per-action feature vectors. An [`OutcomeModel`] describes the joint
//! distribution of potential outcomes given the context, and a
//! [`RewardFunction`] scores `(context, action, outcome)` triples. Together
//! they determine the expected-reward matrix consumed by the policy LP, see
//! [`expected_rewards`].
//!
//! All types are immutable after construction and safe to share across
//! threads. The synthetic generators in [`structural`] and [`stylized`] are
//! pure functions of their configuration and seed.

pub mod structural;
pub mod stylized;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected rewards per (context, action); indexed `[context][action]`.
pub type RewardMatrix = Vec<Vec<f64>>;

/// Inverse logit.
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One context (or individual, for empirical populations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub id: String,
    /// Probability mass; strictly positive.
    pub prob: f64,
    /// Indices into [`Population::groups`]; nonempty, sorted, deduplicated.
    pub group_ids: Vec<usize>,
    /// Cost of each action, in currency units; length K.
    pub costs: Vec<f64>,
    /// Optional per-action feature vectors, each of the population's shared
    /// dimension `d`; length K when present.
    pub features: Option<Vec<Vec<f64>>>,
    /// Optional precomputed expected rewards per action.
    pub expected_rewards: Option<Vec<f64>>,
}

/// A finite decision problem: contexts with probabilities, an ordered action
/// set (index 0 is the conventional no-cost action when present), and a
/// finite set of groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub actions: Vec<String>,
    pub groups: Vec<String>,
    pub contexts: Vec<ContextSpec>,
}

impl Population {
    /// Validates all invariants and returns the population.
    pub fn new(
        actions: Vec<String>,
        groups: Vec<String>,
        contexts: Vec<ContextSpec>,
    ) -> Result<Self> {
        let pop = Population {
            actions,
            groups,
            contexts,
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if self.actions.is_empty() {
            return Err(Error::InvalidPopulation("no actions declared".into()));
        }
        let k = self.actions.len();
        let mut total = 0.0;
        let mut dim: Option<usize> = None;
        for ctx in &self.contexts {
            if !(ctx.prob > 0.0) || !ctx.prob.is_finite() {
                return Err(Error::InvalidPopulation(format!(
                    "context `{}` has nonpositive probability {}",
                    ctx.id, ctx.prob
                )));
            }
            total += ctx.prob;
            if ctx.group_ids.is_empty() {
                return Err(Error::InvalidPopulation(format!(
                    "context `{}` belongs to no group",
                    ctx.id
                )));
            }
            if ctx.group_ids.iter().any(|&g| g >= self.groups.len()) {
                return Err(Error::InvalidPopulation(format!(
                    "context `{}` references an unknown group",
                    ctx.id
                )));
            }
            if ctx.costs.len() != k {
                return Err(Error::InvalidPopulation(format!(
                    "context `{}` has {} costs for {} actions",
                    ctx.id,
                    ctx.costs.len(),
                    k
                )));
            }
            if ctx.costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::InvalidPopulation(format!(
                    "context `{}` has a negative or non-finite cost",
                    ctx.id
                )));
            }
            if let Some(feats) = &ctx.features {
                if feats.len() != k {
                    return Err(Error::InvalidPopulation(format!(
                        "context `{}` has {} feature vectors for {} actions",
                        ctx.id,
                        feats.len(),
                        k
                    )));
                }
                for f in feats {
                    match dim {
                        None => dim = Some(f.len()),
                        Some(d) if d != f.len() => {
                            return Err(Error::InvalidPopulation(format!(
                                "feature dimension mismatch at context `{}`: {} vs {}",
                                ctx.id,
                                f.len(),
                                d
                            )))
                        }
                        _ => {}
                    }
                }
            }
            if let Some(er) = &ctx.expected_rewards {
                if er.len() != k {
                    return Err(Error::InvalidPopulation(format!(
                        "context `{}` has {} expected rewards for {} actions",
                        ctx.id,
                        er.len(),
                        k
                    )));
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPopulation(format!(
                "context probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }

    /// Total probability mass of contexts belonging to group `g`.
    pub fn group_mass(&self, g: usize) -> f64 {
        self.contexts
            .iter()
            .filter(|c| c.group_ids.contains(&g))
            .map(|c| c.prob)
            .sum()
    }

    /// Feature vector for `(context, action)`, or an error if absent.
    pub fn feature(&self, x: usize, k: usize) -> Result<&[f64]> {
        self.contexts[x]
            .features
            .as_ref()
            .map(|f| f[k].as_slice())
            .ok_or_else(|| Error::MissingFeatures {
                context: self.contexts[x].id.clone(),
            })
    }

    pub fn has_features(&self) -> bool {
        self.contexts.iter().all(|c| c.features.is_some())
    }

    /// Shared feature dimension, if features are present.
    pub fn feature_dim(&self) -> Option<usize> {
        self.contexts
            .first()
            .and_then(|c| c.features.as_ref())
            .and_then(|f| f.first())
            .map(Vec::len)
    }

    /// The expected-reward matrix embedded in the contexts, if every context
    /// carries one.
    pub fn embedded_rewards(&self) -> Option<RewardMatrix> {
        self.contexts
            .iter()
            .map(|c| c.expected_rewards.clone())
            .collect()
    }
}

/// Generative model of potential outcomes given context and action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Additive noise around per-cell means: `Y = mean[x][k] + eta` with
    /// `eta` Gaussian of standard deviation `noise_sd` (a `noise_sd^2`
    /// sub-Gaussian).
    Tabular {
        means: Vec<Vec<f64>>,
        noise_sd: f64,
    },
    /// `Y = phi(x,k) . theta + eta`.
    Linear { theta: Vec<f64>, noise_sd: f64 },
    /// Binary outcomes with `P(Y=1) = logistic(phi(x,k) . theta)`.
    Logistic { theta: Vec<f64> },
    /// Binary outcomes from a structural equation: a shared latent
    /// `U ~ Unif(0,1)` is compared against `logistic(logits[x][k])`, so
    /// potential outcomes are monotone across actions whenever
    /// `logits[x][k] >= logits[x][0]`.
    Structural {
        /// Per-context, per-action logits of `P(Y=1)`.
        logits: Vec<Vec<f64>>,
        /// Realized latent draw per context, for populations whose contexts
        /// are individuals with realized potential outcomes.
        #[serde(skip_serializing_if = "Option::is_none")]
        latent: Option<Vec<f64>>,
    },
}

impl OutcomeModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OutcomeModel::Tabular { .. } => "tabular",
            OutcomeModel::Linear { .. } => "linear",
            OutcomeModel::Logistic { .. } => "logistic",
            OutcomeModel::Structural { .. } => "structural",
        }
    }

    /// Whether outcomes are binary in `{0, 1}`.
    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            OutcomeModel::Logistic { .. } | OutcomeModel::Structural { .. }
        )
    }

    /// `E[Y(a_k) | X = x]`, in closed form.
    pub fn mean(&self, pop: &Population, x: usize, k: usize) -> Result<f64> {
        Ok(match self {
            OutcomeModel::Tabular { means, .. } => means[x][k],
            OutcomeModel::Linear { theta, .. } => dot(pop.feature(x, k)?, theta),
            OutcomeModel::Logistic { theta } => logistic(dot(pop.feature(x, k)?, theta)),
            OutcomeModel::Structural { logits, .. } => logistic(logits[x][k]),
        })
    }

    /// Draws one outcome for `(x, k)`.
    pub fn draw(&self, pop: &Population, x: usize, k: usize, rng: &mut impl Rng) -> Result<f64> {
        match self {
            OutcomeModel::Tabular { .. } | OutcomeModel::Linear { .. } => {
                let z: f64 = rand_distr::StandardNormal.sample_with(rng);
                Ok(self.mean(pop, x, k)? + self.noise_sd() * z)
            }
            OutcomeModel::Logistic { .. } | OutcomeModel::Structural { .. } => {
                let u: f64 = rng.gen();
                self.outcome_given_latent(pop, x, k, u)
            }
        }
    }

    /// Outcome under a shared latent draw: for binary models `u` is the
    /// uniform latent compared against `P(Y=1)`; for additive-noise models
    /// `u` is the standard-normal noise. Sharing `u` across actions yields
    /// coupled potential outcomes.
    pub fn outcome_given_latent(
        &self,
        pop: &Population,
        x: usize,
        k: usize,
        u: f64,
    ) -> Result<f64> {
        Ok(match self {
            OutcomeModel::Tabular { .. } | OutcomeModel::Linear { .. } => {
                self.mean(pop, x, k)? + self.noise_sd() * u
            }
            OutcomeModel::Logistic { .. } | OutcomeModel::Structural { .. } => {
                let p = self.mean(pop, x, k)?;
                if u <= p {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// Realized potential-outcome vector for context `x`, available when the
    /// model stores a latent draw per context.
    pub fn realized_outcomes(&self, pop: &Population, x: usize) -> Option<Vec<f64>> {
        match self {
            OutcomeModel::Structural {
                logits,
                latent: Some(u),
            } => Some(
                (0..logits[x].len())
                    .map(|k| if u[x] <= logistic(logits[x][k]) { 1.0 } else { 0.0 })
                    .collect(),
            ),
            _ => {
                let _ = pop;
                None
            }
        }
    }

    fn noise_sd(&self) -> f64 {
        match self {
            OutcomeModel::Tabular { noise_sd, .. } | OutcomeModel::Linear { noise_sd, .. } => {
                *noise_sd
            }
            _ => 0.0,
        }
    }
}

trait SampleWith {
    fn sample_with(self, rng: &mut impl Rng) -> f64;
}

impl SampleWith for rand_distr::StandardNormal {
    fn sample_with(self, rng: &mut impl Rng) -> f64 {
        use rand_distr::Distribution;
        self.sample(rng)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Ex-post value `r(x, a, y)` of a decision and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardFunction {
    /// `r(x, a, y) = y`.
    OutcomeIdentity,
    /// Explicit table over binary outcomes; keys are `(context index,
    /// action index, outcome in {0, 1})`.
    Table { entries: Vec<TableEntry> },
    /// `r(x, a, y) = (1{a != a_0} + appearance_value * y) * (1 +
    /// frequent_boost * 1{frequent contact})`.
    Structured {
        appearance_value: f64,
        frequent_boost: f64,
        frequent: Vec<bool>,
    },
}

/// One `(x, k, y) -> value` reward entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub context: usize,
    pub action: usize,
    pub outcome: u8,
    pub value: f64,
}

impl RewardFunction {
    pub fn kind_name(&self) -> &'static str {
        match self {
            RewardFunction::OutcomeIdentity => "outcome_identity",
            RewardFunction::Table { .. } => "table",
            RewardFunction::Structured { .. } => "structured",
        }
    }

    /// Evaluates `r(x, a_k, y)`.
    pub fn value(&self, pop: &Population, x: usize, k: usize, y: f64) -> Result<f64> {
        match self {
            RewardFunction::OutcomeIdentity => Ok(y),
            RewardFunction::Table { entries } => {
                let yi = if y == 0.0 {
                    0u8
                } else if y == 1.0 {
                    1u8
                } else {
                    return Err(Error::MissingReward {
                        context: pop.contexts[x].id.clone(),
                        action: k,
                        outcome: y,
                    });
                };
                entries
                    .iter()
                    .find(|e| e.context == x && e.action == k && e.outcome == yi)
                    .map(|e| e.value)
                    .ok_or_else(|| Error::MissingReward {
                        context: pop.contexts[x].id.clone(),
                        action: k,
                        outcome: y,
                    })
            }
            RewardFunction::Structured {
                appearance_value,
                frequent_boost,
                frequent,
            } => {
                let a = if k == 0 { 0.0 } else { 1.0 };
                let boost = if frequent[x] { *frequent_boost } else { 0.0 };
                Ok((a + appearance_value * y) * (1.0 + boost))
            }
        }
    }
}

/// Reward specification: a function of outcomes, or a precomputed
/// expected-reward matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardSpec {
    Function(RewardFunction),
    Matrix(RewardMatrix),
}

/// The policymaker's preferences: reward specification, per-group parity
/// weights, and the per-capita budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub reward: RewardSpec,
    /// Group name to nonnegative weight; absent groups carry no penalty.
    pub parity_weights: BTreeMap<String, f64>,
    /// Per-capita budget, in the cost currency; nonnegative.
    pub budget: f64,
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        for (g, &w) in &self.parity_weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParityWeight {
                    group: g.clone(),
                    value: w,
                });
            }
        }
        if !self.budget.is_finite() || self.budget < 0.0 {
            return Err(Error::InvalidParameter {
                name: "budget",
                value: self.budget,
                requirement: "must be finite and nonnegative",
            });
        }
        Ok(())
    }

    /// Resolves the reward specification into an expected-reward matrix.
    pub fn reward_matrix(&self, pop: &Population, model: &OutcomeModel) -> Result<RewardMatrix> {
        match &self.reward {
            RewardSpec::Matrix(m) => Ok(m.clone()),
            RewardSpec::Function(f) => expected_rewards(pop, f, model),
        }
    }
}

/// Computes `f(x, k) = E_Y[r(x, a_k, Y(a_k)) | X = x]` for every context and
/// action, exactly:
///
/// - binary models take the two-point expectation over `y in {0, 1}`,
/// - additive-noise models (tabular, linear) support rewards affine in the
///   outcome (the identity and structured kinds), evaluated at the mean.
pub fn expected_rewards(
    pop: &Population,
    reward: &RewardFunction,
    model: &OutcomeModel,
) -> Result<RewardMatrix> {
    let k = pop.n_actions();
    let mut out = Vec::with_capacity(pop.n_contexts());
    for x in 0..pop.n_contexts() {
        let mut row = Vec::with_capacity(k);
        for a in 0..k {
            let mean = model.mean(pop, x, a)?;
            let f = if model.is_binary() {
                let p1 = mean;
                let r0 = reward.value(pop, x, a, 0.0)?;
                let r1 = reward.value(pop, x, a, 1.0)?;
                (1.0 - p1) * r0 + p1 * r1
            } else {
                match reward {
                    RewardFunction::OutcomeIdentity | RewardFunction::Structured { .. } => {
                        reward.value(pop, x, a, mean)?
                    }
                    RewardFunction::Table { .. } => {
                        return Err(Error::RewardModelMismatch {
                            reward: reward.kind_name().into(),
                            model: model.kind_name().into(),
                        })
                    }
                }
            };
            row.push(f);
        }
        out.push(row);
    }
    Ok(out)
}
