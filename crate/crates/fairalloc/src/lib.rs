//! Budget-constrained, parity-penalized allocation policies.
//!
//! This crate computes optimal allocation policies for finite populations by
//! linear programming, with a utility that trades expected outcomes against
//! absolute per-group spending-parity penalties under a per-capita budget.
//! Around that core it provides:
//!
//! - synthetic population generators with structural outcome models,
//! - reward-model estimators (tabular means, least squares, logistic MLE
//!   with Laplace posteriors),
//! - randomized-experiment design (round-robin schedules, G-optimal designs
//!   via log-det maximization) and sample-size calculators,
//! - an online policy-learning loop (epsilon-greedy / Thompson / UCB) with
//!   budget tracking and nearest-neighbor policy extension,
//! - Pareto-frontier tracing and reference allocation points, and
//! - CSV/SVG emission plus a thin command-line front end.
//!
//! Start with the runnable programs under `examples/` — there is one per
//! capability — or with [`policy::solve_policy`] for the core optimization.

pub mod bandit;
pub mod chart;
pub mod cli;
pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod lp;
pub mod policy;
pub mod population;

pub use error::{Error, Result};
