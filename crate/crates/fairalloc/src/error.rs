//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by population construction, policy optimization,
/// estimation, design, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A population invariant does not hold (probabilities, groups, costs,
    /// feature dimensions).
    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    /// Requested a population of size zero.
    #[error("population size must be positive")]
    EmptyPopulation,

    /// The reward function has no entry for an outcome the model can emit.
    #[error("reward undefined for context `{context}`, action {action}, outcome {outcome}")]
    MissingReward {
        context: String,
        action: usize,
        outcome: f64,
    },

    /// The reward function cannot be combined with this outcome model
    /// (e.g. a finite outcome table against a continuous-outcome model).
    #[error("reward kind `{reward}` not usable with outcome model `{model}`")]
    RewardModelMismatch { reward: String, model: String },

    /// A parity weight is negative, which makes the absolute-value
    /// linearization unsound.
    #[error("parity weight for group `{group}` is {value}; weights must be nonnegative")]
    InvalidParityWeight { group: String, value: f64 },

    /// A conditional expectation is taken over a group with zero probability
    /// mass.
    #[error("group `{group}` has zero probability mass; conditional spend undefined")]
    UndefinedConditional { group: String },

    /// The budget admits no feasible policy.
    #[error("no feasible policy within budget {budget}")]
    InfeasibleBudget { budget: f64 },

    /// Threshold extraction was asked for on an instance outside its
    /// hypotheses.
    #[error("threshold policy not applicable: {condition}")]
    ThresholdNotApplicable { condition: String },

    /// A group has no members who would benefit from treatment, so its false
    /// negative rate is undefined.
    #[error("group `{group}` has no benefiting members; FNR undefined")]
    FnrUndefined { group: String },

    /// Design matrix is rank deficient and the ridge fallback is disabled.
    #[error("design matrix rank deficient ({rows} rows, {cols} columns) and ridge disabled")]
    RankDeficient { rows: usize, cols: usize },

    /// Iterative fitting did not reach the gradient tolerance.
    #[error("fit did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// The feature span does not cover the parameter space, so no design has
    /// a nonsingular covariance.
    #[error("feature span is rank deficient; no nondegenerate design exists")]
    DegenerateDesign,

    /// Features were required but absent.
    #[error("population has no features for context `{context}`")]
    MissingFeatures { context: String },

    /// A scalar parameter is outside its admissible range.
    #[error("parameter `{name}` = {value} violates: {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// An LP referenced an undeclared variable.
    #[error("constraint references undeclared variable index {0}")]
    UnknownVariable(usize),

    /// Oracle and no-treatment utilities coincide, so percent-of-optimal is
    /// undefined.
    #[error("oracle and no-treatment utilities are equal; percent-of-optimal undefined")]
    PctOfOptimalUndefined,

    /// No candidate shares the query's group memberships.
    #[error("no candidate shares group memberships of context `{context}`")]
    NoSameGroupCandidate { context: String },

    /// An experiment trace was empty where records were required.
    #[error("experiment trace is empty")]
    EmptyTrace,

    /// An internal numerical invariant failed.
    #[error("numerical failure: {what}")]
    NumericalFailure { what: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
