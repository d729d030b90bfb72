//! Reward-model estimation from logged `(context, action, outcome)` data.
//!
//! Three estimators mirror the outcome-model kinds: per-cell sample means
//! for tabular rewards, ordinary least squares for linear rewards, and
//! penalized logistic regression (IRLS) for binary rewards. Each fit carries
//! a Gaussian (conjugate or Laplace) posterior approximation so that
//! Thompson sampling can draw parameters and UCB can take upper posterior
//! quantiles; binary tabular cells use Beta posteriors with a Jeffreys
//! prior instead.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::population::{logistic, Population, RewardMatrix};

/// One logged decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Iteration at which the decision was made.
    pub iter: usize,
    /// Context index within the population.
    pub context: usize,
    /// Action index.
    pub action: usize,
    pub outcome: f64,
    pub cost: f64,
}

/// Logged decisions plus provenance tags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
    /// Data-collection method label.
    pub method: String,
    /// Replication index.
    pub rep: u32,
}

impl Dataset {
    pub fn validate(&self, n_contexts: usize, n_actions: usize) -> Result<()> {
        for r in &self.records {
            if r.context >= n_contexts || r.action >= n_actions {
                return Err(Error::Parse(format!(
                    "record at iter {} references context {} / action {} out of range",
                    r.iter, r.context, r.action
                )));
            }
            if !r.outcome.is_finite() {
                return Err(Error::Parse(format!(
                    "record at iter {} has non-finite outcome",
                    r.iter
                )));
            }
        }
        Ok(())
    }
}

/// Per-cell tabular fit.
#[derive(Debug, Clone)]
pub struct TabularFit {
    /// Sample means; unobserved cells hold `prior_mean`.
    pub means: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    /// Successes per cell (meaningful when `binary`).
    pub successes: Vec<Vec<f64>>,
    /// Per-cell outcome variance estimate (pooled fallback).
    pub variances: Vec<Vec<f64>>,
    pub prior_mean: f64,
    /// True when every observed outcome lies in {0, 1}.
    pub binary: bool,
    /// Cells that carry the prior mean because they were never observed.
    pub unobserved: Vec<(usize, usize)>,
}

/// Gaussian-posterior fit of a parametric reward model.
#[derive(Debug, Clone)]
pub struct ParametricFit {
    /// Point estimate of the coefficient vector.
    pub theta: DVector<f64>,
    /// Posterior covariance (symmetric positive semidefinite).
    pub covariance: DMatrix<f64>,
    /// Lower-triangular factor of the covariance, for posterior draws.
    pub sqrt_covariance: DMatrix<f64>,
    /// Whether the ridge fallback was used (rank-deficient design).
    pub ridged: bool,
    /// Residual variance estimate (linear kind only).
    pub noise_var: f64,
}

/// A fitted reward model with its posterior approximation.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Tabular(TabularFit),
    Linear(ParametricFit),
    Logistic(ParametricFit),
}

/// Fits per-cell sample means. Unobserved cells carry `prior_mean` and are
/// flagged in the result.
///
/// Posterior variance note: the sample mean of `n` observations with
/// outcome variance `sigma^2` has variance `sigma^2 / n`, and that is the
/// rate used for Gaussian cell posteriors here. (A `sigma^2 / n^2` rate is
/// sometimes quoted for the sub-Gaussian parameter of a rescaled sum; it is
/// not the sampling variance of the mean and is deliberately not used.)
pub fn fit_tabular(
    data: &Dataset,
    n_contexts: usize,
    n_actions: usize,
    prior_mean: f64,
) -> Result<FittedModel> {
    data.validate(n_contexts, n_actions)?;
    let mut sums = vec![vec![0.0; n_actions]; n_contexts];
    let mut sq = vec![vec![0.0; n_actions]; n_contexts];
    let mut counts = vec![vec![0usize; n_actions]; n_contexts];
    let mut successes = vec![vec![0.0; n_actions]; n_contexts];
    let mut binary = true;
    for r in &data.records {
        sums[r.context][r.action] += r.outcome;
        sq[r.context][r.action] += r.outcome * r.outcome;
        counts[r.context][r.action] += 1;
        if r.outcome == 1.0 {
            successes[r.context][r.action] += 1.0;
        } else if r.outcome != 0.0 {
            binary = false;
        }
    }
    // Pooled variance across observed cells, as the fallback for cells with
    // fewer than two observations.
    let mut pooled_num = 0.0;
    let mut pooled_den = 0.0;
    for x in 0..n_contexts {
        for a in 0..n_actions {
            let n = counts[x][a];
            if n >= 2 {
                let mean = sums[x][a] / n as f64;
                pooled_num += sq[x][a] - n as f64 * mean * mean;
                pooled_den += (n - 1) as f64;
            }
        }
    }
    let pooled = if pooled_den > 0.0 {
        (pooled_num / pooled_den).max(0.0)
    } else {
        1.0
    };

    let mut means = vec![vec![prior_mean; n_actions]; n_contexts];
    let mut variances = vec![vec![pooled; n_actions]; n_contexts];
    let mut unobserved = Vec::new();
    for x in 0..n_contexts {
        for a in 0..n_actions {
            let n = counts[x][a];
            if n == 0 {
                unobserved.push((x, a));
                continue;
            }
            let mean = sums[x][a] / n as f64;
            means[x][a] = mean;
            if n >= 2 {
                variances[x][a] = ((sq[x][a] - n as f64 * mean * mean) / (n - 1) as f64).max(0.0);
            }
        }
    }
    Ok(FittedModel::Tabular(TabularFit {
        means,
        counts,
        successes,
        variances,
        prior_mean,
        binary,
        unobserved,
    }))
}

/// Options for the linear fit.
#[derive(Debug, Clone, Copy)]
pub struct LinearOptions {
    /// Ridge added to the normal equations when the design is rank
    /// deficient; `None` turns the fallback into a hard error.
    pub ridge_fallback: Option<f64>,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            ridge_fallback: Some(1e-8),
        }
    }
}

/// Ordinary least squares on `phi(x, a) -> outcome`, with posterior
/// `N(theta_hat, sigma_hat^2 (X^T X)^{-1})`.
pub fn fit_linear(data: &Dataset, pop: &Population, opts: LinearOptions) -> Result<FittedModel> {
    data.validate(pop.n_contexts(), pop.n_actions())?;
    let d = pop.feature_dim().ok_or(Error::MissingFeatures {
        context: pop.contexts[0].id.clone(),
    })?;
    let n = data.records.len();
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    let mut yty = 0.0;
    for r in &data.records {
        let phi = pop.feature(r.context, r.action)?;
        for i in 0..d {
            xty[i] += phi[i] * r.outcome;
            for j in 0..d {
                xtx[(i, j)] += phi[i] * phi[j];
            }
        }
        yty += r.outcome * r.outcome;
    }
    let (solved, ridged) = match Cholesky::new(xtx.clone()) {
        Some(chol) if n >= d => (chol, false),
        _ => {
            let ridge = opts.ridge_fallback.ok_or(Error::RankDeficient {
                rows: n,
                cols: d,
            })?;
            let mut reg = xtx.clone();
            for i in 0..d {
                reg[(i, i)] += ridge;
            }
            let chol = Cholesky::new(reg).ok_or(Error::RankDeficient { rows: n, cols: d })?;
            (chol, true)
        }
    };
    let theta = solved.solve(&xty);
    // Residual sum of squares without materializing X.
    let rss = (yty - 2.0 * theta.dot(&xty) + (&xtx * &theta).dot(&theta)).max(0.0);
    let dof = if n > d { (n - d) as f64 } else { 1.0 };
    let noise_var = rss / dof;
    let covariance = {
        let inv = solved.inverse();
        let mut cov = inv * noise_var;
        symmetrize(&mut cov);
        cov
    };
    let sqrt_covariance = psd_sqrt(&covariance);
    Ok(FittedModel::Linear(ParametricFit {
        theta,
        covariance,
        sqrt_covariance,
        ridged,
        noise_var,
    }))
}

/// Penalized logistic regression by iteratively reweighted least squares.
///
/// Maximizes the log-likelihood minus `tau/2 ||theta||^2` until the
/// penalized gradient's sup-norm drops below 1e-8. The posterior is the
/// Laplace approximation `N(theta_hat, (H + tau I)^{-1})` with `H` the
/// negative log-likelihood Hessian at the optimum. `init` warm-starts the
/// iteration.
pub fn fit_logistic(
    data: &Dataset,
    pop: &Population,
    prior_precision: f64,
    init: Option<&[f64]>,
) -> Result<FittedModel> {
    data.validate(pop.n_contexts(), pop.n_actions())?;
    let d = pop.feature_dim().ok_or(Error::MissingFeatures {
        context: pop.contexts[0].id.clone(),
    })?;
    let mut features = Vec::with_capacity(data.records.len() * d);
    let mut outcomes = Vec::with_capacity(data.records.len());
    for r in &data.records {
        features.extend_from_slice(pop.feature(r.context, r.action)?);
        outcomes.push(r.outcome);
    }
    fit_logistic_packed(&features, &outcomes, d, prior_precision, init)
}

/// Logistic fit over row-major packed features (`outcomes.len()` rows of
/// dimension `d`). This is the allocation-light path the learning loop
/// calls every step with incrementally grown arrays.
pub fn fit_logistic_packed(
    features: &[f64],
    outcomes: &[f64],
    d: usize,
    prior_precision: f64,
    init: Option<&[f64]>,
) -> Result<FittedModel> {
    if prior_precision < 0.0 {
        return Err(Error::InvalidParameter {
            name: "prior_precision",
            value: prior_precision,
            requirement: "must be nonnegative",
        });
    }
    for &y in outcomes {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Parse(format!(
                "logistic fit requires binary outcomes, got {y}"
            )));
        }
    }
    let tau = prior_precision;
    let mut theta: Vec<f64> = match init {
        Some(t) => t.to_vec(),
        None => vec![0.0; d],
    };

    const GRAD_TOL: f64 = 1e-8;
    const MAX_ITER: usize = 100;

    let penalized_loss = |theta: &[f64]| -> f64 {
        let mut loss = 0.5 * tau * theta.iter().map(|t| t * t).sum::<f64>();
        for (phi, &y) in features.chunks_exact(d).zip(outcomes.iter()) {
            let z: f64 = phi.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            // -log p(y | z), written to avoid overflow for large |z|.
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
        }
        loss
    };

    // Upper-triangular Hessian accumulator, mirrored before the solve.
    let mut grad = vec![0.0; d];
    let mut hess_ut = vec![0.0; d * d];
    let mut loss = penalized_loss(&theta);
    for iter in 0..MAX_ITER {
        for (i, g) in grad.iter_mut().enumerate() {
            *g = -tau * theta[i];
        }
        hess_ut.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            hess_ut[i * d + i] = tau;
        }
        for (phi, &y) in features.chunks_exact(d).zip(outcomes.iter()) {
            let z: f64 = phi.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let p = logistic(z);
            let w = (p * (1.0 - p)).max(1e-12);
            let resid = y - p;
            for i in 0..d {
                grad[i] += phi[i] * resid;
                let wphi = w * phi[i];
                let row = &mut hess_ut[i * d..(i + 1) * d];
                for j in i..d {
                    row[j] += wphi * phi[j];
                }
            }
        }
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_norm < GRAD_TOL {
            break;
        }
        if iter == MAX_ITER - 1 {
            return Err(Error::NonConvergence {
                iterations: MAX_ITER,
                grad_norm,
                last_iterate: theta,
            });
        }
        let hess = DMatrix::from_fn(d, d, |i, j| {
            if i <= j {
                hess_ut[i * d + j]
            } else {
                hess_ut[j * d + i]
            }
        });
        let chol = Cholesky::new(hess).ok_or_else(|| Error::NumericalFailure {
            what: "logistic Hessian not positive definite".into(),
        })?;
        let step = chol.solve(&DVector::from_column_slice(&grad));
        // Newton step with halving if the penalized loss does not improve.
        // The acceptance slack is relative: with many records the loss is
        // large and its evaluation noise exceeds any absolute epsilon.
        let slack = 1e-10 * (1.0 + loss.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + scale * s)
                .collect();
            let candidate_loss = penalized_loss(&candidate);
            if candidate_loss <= loss + slack {
                theta = candidate;
                loss = candidate_loss;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                grad_norm,
                last_iterate: theta,
            });
        }
    }

    // Laplace covariance at the optimum.
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = tau;
    }
    for phi in features.chunks_exact(d) {
        let z: f64 = phi.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        let p = logistic(z);
        let w = (p * (1.0 - p)).max(1e-12);
        for i in 0..d {
            for j in 0..d {
                hess[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    let chol = Cholesky::new(hess).ok_or_else(|| Error::NumericalFailure {
        what: "logistic Hessian not positive definite".into(),
    })?;
    let mut covariance = chol.inverse();
    symmetrize(&mut covariance);
    let sqrt_covariance = psd_sqrt(&covariance);
    Ok(FittedModel::Logistic(ParametricFit {
        theta: DVector::from_vec(theta),
        covariance,
        sqrt_covariance,
        ridged: false,
        noise_var: f64::NAN,
    }))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Lower-triangular square root of a PSD matrix: Cholesky when positive
/// definite, eigenvalue clamping otherwise.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return chol.l();
    }
    let eig = m.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= s;
        }
    }
    scaled
}

fn z_quantile(alpha: f64) -> f64 {
    statrs::distribution::Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(alpha)
}

impl FittedModel {
    /// Plug-in expected-reward matrix.
    pub fn point_rewards(&self, pop: &Population) -> Result<RewardMatrix> {
        match self {
            FittedModel::Tabular(fit) => Ok(fit.means.clone()),
            FittedModel::Linear(fit) => map_linear(pop, &fit.theta, |z| z),
            FittedModel::Logistic(fit) => map_linear(pop, &fit.theta, logistic),
        }
    }

    /// One posterior draw, mapped through the mean function to an
    /// expected-reward table.
    pub fn draw_rewards(&self, pop: &Population, rng: &mut impl Rng) -> Result<RewardMatrix> {
        match self {
            FittedModel::Tabular(fit) => {
                let mut out = fit.means.clone();
                for (x, row) in out.iter_mut().enumerate() {
                    for (a, v) in row.iter_mut().enumerate() {
                        *v = fit.draw_cell(x, a, rng);
                    }
                }
                Ok(out)
            }
            FittedModel::Linear(fit) => {
                let theta = fit.draw_theta(rng);
                map_linear(pop, &theta, |z| z)
            }
            FittedModel::Logistic(fit) => {
                let theta = fit.draw_theta(rng);
                map_linear(pop, &theta, logistic)
            }
        }
    }

    /// One posterior draw of the parameter vector (parametric kinds only).
    pub fn posterior_draw(&self, rng: &mut impl Rng) -> Option<Vec<f64>> {
        match self {
            FittedModel::Linear(fit) | FittedModel::Logistic(fit) => {
                Some(fit.draw_theta(rng).iter().cloned().collect())
            }
            FittedModel::Tabular(_) => None,
        }
    }

    /// The `alpha`-quantile of the posterior of the expected reward at one
    /// `(context, action)` cell. For parametric kinds this is the Gaussian
    /// quantile of the linear index mapped through the (monotone) mean
    /// function; for binary tabular cells it is a Beta quantile.
    pub fn optimistic_estimate(
        &self,
        pop: &Population,
        alpha: f64,
        x: usize,
        k: usize,
    ) -> Result<f64> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: alpha,
                requirement: "must lie in (0, 1)",
            });
        }
        match self {
            FittedModel::Tabular(fit) => Ok(fit.quantile_cell(x, k, alpha)),
            FittedModel::Linear(fit) => {
                let phi = DVector::from_column_slice(pop.feature(x, k)?);
                let mean = fit.theta.dot(&phi);
                let sd = (&fit.covariance * &phi).dot(&phi).max(0.0).sqrt();
                Ok(mean + z_quantile(alpha) * sd)
            }
            FittedModel::Logistic(fit) => {
                let phi = DVector::from_column_slice(pop.feature(x, k)?);
                let mean = fit.theta.dot(&phi);
                let sd = (&fit.covariance * &phi).dot(&phi).max(0.0).sqrt();
                Ok(logistic(mean + z_quantile(alpha) * sd))
            }
        }
    }

    /// Matrix of optimistic estimates over all cells.
    pub fn optimistic_rewards(&self, pop: &Population, alpha: f64) -> Result<RewardMatrix> {
        let mut out = Vec::with_capacity(pop.n_contexts());
        for x in 0..pop.n_contexts() {
            let mut row = Vec::with_capacity(pop.n_actions());
            for k in 0..pop.n_actions() {
                row.push(self.optimistic_estimate(pop, alpha, x, k)?);
            }
            out.push(row);
        }
        Ok(out)
    }

    pub fn as_parametric(&self) -> Option<&ParametricFit> {
        match self {
            FittedModel::Linear(fit) | FittedModel::Logistic(fit) => Some(fit),
            FittedModel::Tabular(_) => None,
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularFit> {
        match self {
            FittedModel::Tabular(fit) => Some(fit),
            _ => None,
        }
    }
}

impl ParametricFit {
    fn draw_theta(&self, rng: &mut impl Rng) -> DVector<f64> {
        let d = self.theta.len();
        let z = DVector::from_iterator(
            d,
            (0..d).map(|_| rand_distr::StandardNormal.sample(rng)),
        );
        &self.theta + &self.sqrt_covariance * z
    }
}

impl TabularFit {
    /// Posterior draw for one cell: Beta (Jeffreys prior) when binary,
    /// Normal otherwise.
    fn draw_cell(&self, x: usize, a: usize, rng: &mut impl Rng) -> f64 {
        let n = self.counts[x][a] as f64;
        if self.binary {
            let s = self.successes[x][a];
            let beta = rand_distr::Beta::new(s + 0.5, n - s + 0.5).expect("beta parameters");
            beta.sample(rng)
        } else if n > 0.0 {
            let sd = (self.variances[x][a] / n).sqrt();
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            self.means[x][a] + sd * z
        } else {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            self.prior_mean + z
        }
    }

    fn quantile_cell(&self, x: usize, a: usize, alpha: f64) -> f64 {
        let n = self.counts[x][a] as f64;
        if self.binary {
            let s = self.successes[x][a];
            statrs::distribution::Beta::new(s + 0.5, n - s + 0.5)
                .expect("beta parameters")
                .inverse_cdf(alpha)
        } else if n > 0.0 {
            let sd = (self.variances[x][a] / n).sqrt();
            self.means[x][a] + z_quantile(alpha) * sd
        } else {
            self.prior_mean + z_quantile(alpha)
        }
    }
}

fn map_linear(
    pop: &Population,
    theta: &DVector<f64>,
    link: impl Fn(f64) -> f64,
) -> Result<RewardMatrix> {
    let mut out = Vec::with_capacity(pop.n_contexts());
    for x in 0..pop.n_contexts() {
        let mut row = Vec::with_capacity(pop.n_actions());
        for k in 0..pop.n_actions() {
            let phi = pop.feature(x, k)?;
            let z: f64 = phi.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            row.push(link(z));
        }
        out.push(row);
    }
    Ok(out)
}
