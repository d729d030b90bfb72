//! Randomized-experiment design and sample-size calculators.
//!
//! [`round_robin_schedule`] allocates the least-sampled action per arriving
//! context. [`g_optimal_design`] maximizes `log det Sigma(pi)` over
//! context-conditioned action distributions by Frank-Wolfe with exact line
//! search; at the optimum the weighted worst-case leverage `g(pi)` equals the
//! feature dimension `d`, which bounds the prediction-variance constant
//! `c(pi) <= sqrt(d)`. [`sample_bound`] evaluates the closed-form sample-size
//! expressions for the tabular, linear, and logistic reward settings, and
//! [`verify_bound_empirically`] replays them against simulated collections.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_linear, fit_tabular, Dataset, LinearOptions, Record};
use crate::policy::{solve_policy, utility, Policy};
use crate::population::{OutcomeModel, Population, UtilitySpec};

/// A data-collection design with its covariance diagnostics.
#[derive(Debug, Clone)]
pub struct DesignPolicy {
    pub policy: Policy,
    /// `Sigma(pi) = sum_{x,k} p_x pi_xk phi phi^T`.
    pub sigma: DMatrix<f64>,
    pub log_det: f64,
    /// `g(pi) = sum_x p_x max_k ||phi(x,k)||^2_{Sigma^{-1}}`.
    pub g_value: f64,
    /// `c(pi) = sum_x p_x max_k ||phi(x,k)||_{Sigma^{-1}}`.
    pub c_value: f64,
    /// Statistical leverage `max_{x,k} ||Sigma^{-1/2} phi|| / sqrt(d)`.
    pub rho0: f64,
    pub iterations: usize,
}

/// The feature covariance induced by a design:
/// `Sigma(pi) = sum_{x,k} p_x pi_xk phi(x,a_k) phi(x,a_k)^T`.
pub fn covariance(pop: &Population, design: &Policy) -> Result<DMatrix<f64>> {
    let d = pop.feature_dim().ok_or_else(|| Error::MissingFeatures {
        context: pop.contexts[0].id.clone(),
    })?;
    let mut sigma = DMatrix::zeros(d, d);
    for (x, ctx) in pop.contexts.iter().enumerate() {
        for k in 0..pop.n_actions() {
            let w = ctx.prob * design.prob(x, k);
            if w == 0.0 {
                continue;
            }
            let phi = pop.feature(x, k)?;
            for i in 0..d {
                let wi = w * phi[i];
                for j in 0..d {
                    sigma[(i, j)] += wi * phi[j];
                }
            }
        }
    }
    Ok(sigma)
}

/// Diagnostics of an arbitrary design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub log_det: f64,
    pub g_value: f64,
    pub c_value: f64,
    pub rho0: f64,
}

pub fn design_diagnostics(pop: &Population, design: &Policy) -> Result<DesignDiagnostics> {
    let sigma = covariance(pop, design)?;
    let chol = checked_cholesky(&sigma)?;
    let (g_value, c_value, rho0) = leverage_stats(pop, &chol)?;
    Ok(DesignDiagnostics {
        log_det: log_det(&chol),
        g_value,
        c_value,
        rho0,
    })
}

fn log_det(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Returns `(g, c, rho0)` under the covariance factorization.
fn leverage_stats(
    pop: &Population,
    chol: &Cholesky<f64, nalgebra::Dyn>,
) -> Result<(f64, f64, f64)> {
    let d = pop.feature_dim().expect("features checked") as f64;
    let mut g = 0.0;
    let mut c = 0.0;
    let mut max_lev: f64 = 0.0;
    for (x, ctx) in pop.contexts.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..pop.n_actions() {
            let phi = DVector::from_column_slice(pop.feature(x, k)?);
            let lev = chol.solve(&phi).dot(&phi).max(0.0);
            worst = worst.max(lev);
            max_lev = max_lev.max(lev);
        }
        g += ctx.prob * worst;
        c += ctx.prob * worst.sqrt();
    }
    Ok((g, c, (max_lev / d).sqrt()))
}

/// Cholesky with a conditioning guard: a feature span that does not cover
/// the parameter space shows up as a vanishing pivot.
fn checked_cholesky(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let chol = Cholesky::new(sigma.clone()).ok_or(Error::DegenerateDesign)?;
    let diag = chol.l().diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // Pivots live on the square root of the eigenvalue scale; a ratio of
    // 1e-7 here corresponds to a condition number around 1e14.
    if !(min > 0.0) || min < 1e-7 * max {
        return Err(Error::DegenerateDesign);
    }
    Ok(chol)
}

/// Maximizes `log det Sigma(pi)` over row-stochastic designs by pairwise
/// Frank-Wolfe.
///
/// Per step it computes per-cell leverages `||phi(x,k)||^2_{Sigma^{-1}}`
/// (the objective gradient is `p_x` times them), then shifts mass within the
/// context with the largest leverage spread, from its lowest-leverage
/// supported action to its highest-leverage action. The shift is a rank-2
/// covariance update, so the exact line-search step has a closed form in the
/// two nonzero generalized eigenvalues. Pairwise steps avoid the sublinear
/// zig-zag of vanilla Frank-Wolfe near a face of the simplex product.
///
/// Terminates when `g(pi) - d <= tol`, which certifies `g(pi) <= d + tol`
/// and hence `c(pi) <= sqrt(d + tol)`.
pub fn g_optimal_design(pop: &Population, tol: f64, max_iter: usize) -> Result<DesignPolicy> {
    let d = pop.feature_dim().ok_or_else(|| Error::MissingFeatures {
        context: pop.contexts[0].id.clone(),
    })?;
    let n = pop.n_contexts();
    let k = pop.n_actions();
    let mut policy = Policy::uniform(n, k);

    let mut iterations = 0;
    loop {
        let sigma = covariance(pop, &policy)?;
        let chol = checked_cholesky(&sigma)?;

        // Per-cell leverages; convergence uses g - d, which equals the
        // Frank-Wolfe gap because the pi-weighted leverage average is
        // exactly d.
        let mut g = 0.0;
        let mut leverages = vec![vec![0.0; k]; n];
        for (x, ctx) in pop.contexts.iter().enumerate() {
            let mut best = f64::MIN;
            for a in 0..k {
                let phi = DVector::from_column_slice(pop.feature(x, a)?);
                let lev = chol.solve(&phi).dot(&phi);
                leverages[x][a] = lev;
                best = best.max(lev);
            }
            g += ctx.prob * best;
        }
        let gap = g - d as f64;
        if gap <= tol {
            let (g_value, c_value, rho0) = leverage_stats(pop, &chol)?;
            return Ok(DesignPolicy {
                policy,
                log_det: log_det(&chol),
                sigma,
                g_value,
                c_value,
                rho0,
                iterations,
            });
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gap,
                last_iterate: policy.rows.iter().flatten().cloned().collect(),
            });
        }
        iterations += 1;

        // Pick the context and (toward, away) action pair with the largest
        // weighted leverage spread among supported away actions.
        let mut best_x = 0;
        let mut best_pair = (0usize, 0usize);
        let mut best_spread = f64::MIN;
        for (x, ctx) in pop.contexts.iter().enumerate() {
            let mut hi = 0;
            let mut lo = usize::MAX;
            for a in 0..k {
                if leverages[x][a] > leverages[x][hi] {
                    hi = a;
                }
                if policy.rows[x][a] > 1e-14
                    && (lo == usize::MAX || leverages[x][a] < leverages[x][lo])
                {
                    lo = a;
                }
            }
            let spread = ctx.prob * (leverages[x][hi] - leverages[x][lo]);
            if spread > best_spread {
                best_spread = spread;
                best_x = x;
                best_pair = (hi, lo);
            }
        }
        let (toward, away) = best_pair;
        let weight = pop.contexts[best_x].prob;

        // Line search over gamma in [0, available away mass]:
        // Sigma + gamma p_x (phi_b phi_b^T - phi_w phi_w^T) changes
        // log det by sum_j log(1 + gamma nu_j) over the two nonzero
        // eigenvalues of the whitened rank-2 update.
        let phi_b = DVector::from_column_slice(pop.feature(best_x, toward)?);
        let phi_w = DVector::from_column_slice(pop.feature(best_x, away)?);
        let u = chol
            .l()
            .solve_lower_triangular(&(phi_b * weight.sqrt()))
            .expect("cholesky factor is triangular");
        let v = chol
            .l()
            .solve_lower_triangular(&(phi_w * weight.sqrt()))
            .expect("cholesky factor is triangular");
        let (nu1, nu2) = rank_two_eigenvalues(&u, &v);
        let mut gamma_max = policy.rows[best_x][away];
        for nu in [nu1, nu2] {
            if nu < 0.0 {
                gamma_max = gamma_max.min(-(1.0 - 1e-9) / nu);
            }
        }
        let slope0 = nu1 + nu2;
        let gamma = if slope0 <= 0.0 {
            // Numerically flat pair; take no step and stop at this gap.
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gap,
                last_iterate: policy.rows.iter().flatten().cloned().collect(),
            });
        } else if nu1 * nu2 >= 0.0 {
            // Objective increases over the whole segment.
            gamma_max
        } else {
            (-(nu1 + nu2) / (2.0 * nu1 * nu2)).clamp(0.0, gamma_max)
        };

        policy.rows[best_x][toward] += gamma;
        policy.rows[best_x][away] = (policy.rows[best_x][away] - gamma).max(0.0);
    }
}

/// Nonzero eigenvalues of `u u^T - v v^T` (descending).
fn rank_two_eigenvalues(u: &DVector<f64>, v: &DVector<f64>) -> (f64, f64) {
    let uu = u.dot(u);
    let uv = u.dot(v);
    let vv = v.dot(v);
    // On span{u, v} the operator matrix has trace uu - vv and
    // determinant uv^2 - uu*vv (Gram identity).
    let tr = uu - vv;
    let det = uv * uv - uu * vv;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc, tr / 2.0 - disc)
}

/// Stateful round-robin assigner: per context, always the least-sampled
/// action, ties broken by the lowest action index.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    counts: Vec<Vec<usize>>,
}

impl RoundRobin {
    pub fn new(n_contexts: usize, n_actions: usize) -> Self {
        RoundRobin {
            counts: vec![vec![0; n_actions]; n_contexts],
        }
    }

    pub fn assign(&mut self, context: usize) -> usize {
        let row = &mut self.counts[context];
        let mut best = 0;
        for (a, &c) in row.iter().enumerate() {
            if c < row[best] {
                best = a;
            }
        }
        row[best] += 1;
        best
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }
}

/// Samples `n` arrivals from the context distribution and assigns actions
/// round-robin. Returns `(context, action)` pairs.
pub fn round_robin_schedule(
    pop: &Population,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let sampler = ContextSampler::new(pop);
    let mut rr = RoundRobin::new(pop.n_contexts(), pop.n_actions());
    (0..n)
        .map(|_| {
            let x = sampler.sample(rng);
            (x, rr.assign(x))
        })
        .collect()
}

/// Draws context indices proportional to their probabilities.
pub struct ContextSampler {
    cumulative: Vec<f64>,
}

impl ContextSampler {
    pub fn new(pop: &Population) -> Self {
        let mut cumulative = Vec::with_capacity(pop.n_contexts());
        let mut acc = 0.0;
        for ctx in &pop.contexts {
            acc += ctx.prob;
            cumulative.push(acc);
        }
        ContextSampler { cumulative }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cumulative.last().unwrap();
        self.cumulative
            .partition_point(|&c| c < u)
            .min(self.cumulative.len() - 1)
    }
}

/// Query for the sample-size calculators. `epsilon` is the target utility
/// gap and `delta` the failure probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BoundQuery {
    Tabular {
        sigma: f64,
        epsilon: f64,
        delta: f64,
        n_contexts: usize,
        n_actions: usize,
        p_min: f64,
    },
    Linear {
        sigma: f64,
        epsilon: f64,
        delta: f64,
        d: usize,
        rho0: f64,
        /// Prediction-variance constant; defaults to the G-optimal
        /// guarantee `sqrt(d)` when absent.
        c: Option<f64>,
        /// Multiplier on the epsilon term; 1 evaluates the expression
        /// exactly as derived.
        constant: Option<f64>,
    },
    Logistic {
        epsilon: f64,
        delta: f64,
        d: usize,
        k0: f64,
        k1: f64,
        k2: f64,
        rho: f64,
        c: f64,
        /// Multiplier standing in for the unspecified big-O constant.
        constant: Option<f64>,
    },
}

/// A computed sample size with the exact expression that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundResult {
    pub n: u64,
    pub expression: String,
}

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            requirement: "must be positive",
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            value: delta,
            requirement: "must lie in (0, 1)",
        });
    }
    Ok(())
}

/// Evaluates the sample-size expression for the query. The returned
/// expression string shows every factor with its numeric value, so the
/// formula actually evaluated is never hidden behind big-O notation.
pub fn sample_bound(q: &BoundQuery) -> Result<BoundResult> {
    match *q {
        BoundQuery::Tabular {
            sigma,
            epsilon,
            delta,
            n_contexts,
            n_actions,
            p_min,
        } => {
            check_eps_delta(epsilon, delta)?;
            if !(p_min > 0.0 && p_min <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "p_min",
                    value: p_min,
                    requirement: "must lie in (0, 1]",
                });
            }
            if sigma < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "sigma",
                    value: sigma,
                    requirement: "must be nonnegative",
                });
            }
            let xa = (n_contexts * n_actions) as f64;
            let a = n_actions as f64;
            // Per-cell requirement, clamped to one observation per cell so
            // the coverage term survives sigma -> 0.
            let per_cell_raw = 8.0 * sigma * sigma / (epsilon * epsilon) * (4.0 * xa / delta).ln();
            let per_cell = per_cell_raw.max(1.0);
            let coverage = a * per_cell / p_min;
            let inner = (2.0 * a * per_cell / (delta * p_min)).ln();
            let n = (coverage * inner).ceil() as u64;
            let expression = format!(
                "n = ceil( (|A| n_cell / p_min) * ln(2 |A| n_cell / (delta p_min)) ) \
                 with n_cell = max(1, 8 sigma^2/eps^2 * ln(4 |X||A| / delta)) \
                 = ceil( {coverage:.6} * {inner:.6} ); n_cell = {per_cell:.6} \
                 [sigma={sigma}, eps={epsilon}, delta={delta}, |X|={n_contexts}, |A|={n_actions}, p_min={p_min}]"
            );
            Ok(BoundResult { n, expression })
        }
        BoundQuery::Linear {
            sigma,
            epsilon,
            delta,
            d,
            rho0,
            c,
            constant,
        } => {
            check_eps_delta(epsilon, delta)?;
            let dd = d as f64;
            let c = c.unwrap_or(dd.sqrt());
            let mult = constant.unwrap_or(1.0);
            let burn_in = 6.0 * rho0 * rho0 * dd * (3.0 * dd / delta).ln();
            let tail = (dd + 2.0 * (dd * (3.0 / delta).ln()).sqrt() + 2.0 * (3.0 / delta).ln())
                * (2.0 * c / epsilon).powi(2)
                * sigma
                * sigma
                * mult;
            let n = burn_in.max(tail).ceil() as u64;
            let expression = format!(
                "n = ceil(max( 6 rho0^2 d ln(3d/delta) = {burn_in:.6}, \
                 constant * (2c/eps)^2 sigma^2 (d + 2 sqrt(d ln(3/delta)) + 2 ln(3/delta)) = {tail:.6} )) \
                 [sigma={sigma}, eps={epsilon}, delta={delta}, d={d}, rho0={rho0}, c={c:.6}, constant={mult}]"
            );
            Ok(BoundResult { n, expression })
        }
        BoundQuery::Logistic {
            epsilon,
            delta,
            d,
            k0,
            k1,
            k2,
            rho,
            c,
            constant,
        } => {
            check_eps_delta(epsilon, delta)?;
            let dd = d as f64;
            let mult = constant.unwrap_or(1.0);
            let t1 = k2.powi(4) * (dd + (1.0 / delta).ln());
            let t2 = rho * k0 * k0 * k1 * k1 * dd * dd * (dd / delta).ln();
            let t3 = rho * rho * c * c * k1 * k1 * dd * (1.0 / delta).ln() / (epsilon * epsilon);
            let n = (mult * t1.max(t2).max(t3)).ceil() as u64;
            let expression = format!(
                "n = ceil(constant * max( K2^4 (d + ln(1/delta)) = {t1:.6}, \
                 rho K0^2 K1^2 d^2 ln(d/delta) = {t2:.6}, \
                 rho^2 c^2 K1^2 d ln(1/delta) / eps^2 = {t3:.6} )) \
                 [eps={epsilon}, delta={delta}, d={d}, K0={k0}, K1={k1}, K2={k2}, rho={rho}, c={c}, constant={mult}]"
            );
            Ok(BoundResult { n, expression })
        }
    }
}

/// How actions are assigned while collecting.
#[derive(Debug, Clone)]
pub enum CollectionStrategy {
    RoundRobin,
    /// Sample actions from a fixed design.
    Design(Policy),
}

/// Runs `reps` independent data collections of size `n = sample_bound(q)`,
/// fits the matching estimator, solves the policy under the fitted rewards,
/// and returns the fraction of replications whose utility gap
/// `U(pi*) - U(pi_hat)` stays below `epsilon`.
pub fn verify_bound_empirically(
    pop: &Population,
    model: &OutcomeModel,
    spec: &UtilitySpec,
    q: &BoundQuery,
    collection: &CollectionStrategy,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let bound = sample_bound(q)?;
    let n = bound.n as usize;
    let (epsilon, tabular) = match q {
        BoundQuery::Tabular { epsilon, .. } => (*epsilon, true),
        BoundQuery::Linear { epsilon, .. } => (*epsilon, false),
        BoundQuery::Logistic { .. } => {
            return Err(Error::InvalidParameter {
                name: "variant",
                value: 2.0,
                requirement: "empirical verification supports tabular and linear variants",
            })
        }
    };
    let truth = crate::population::expected_rewards(
        pop,
        &crate::population::RewardFunction::OutcomeIdentity,
        model,
    )?;
    let (_, opt_value) = solve_policy(pop, &truth, spec)?;

    let successes: Result<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let sampler = ContextSampler::new(pop);
            let mut rr = RoundRobin::new(pop.n_contexts(), pop.n_actions());
            let mut records = Vec::with_capacity(n);
            for i in 0..n {
                let x = sampler.sample(&mut rng);
                let a = match collection {
                    CollectionStrategy::RoundRobin => rr.assign(x),
                    CollectionStrategy::Design(design) => {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut chosen = pop.n_actions() - 1;
                        for k in 0..pop.n_actions() {
                            acc += design.prob(x, k);
                            if u < acc {
                                chosen = k;
                                break;
                            }
                        }
                        chosen
                    }
                };
                let y = model.draw(pop, x, a, &mut rng)?;
                records.push(Record {
                    iter: i,
                    context: x,
                    action: a,
                    outcome: y,
                    cost: 0.0,
                });
            }
            let data = Dataset {
                records,
                method: "rct".into(),
                rep: rep as u32,
            };
            let fitted = if tabular {
                fit_tabular(&data, pop.n_contexts(), pop.n_actions(), 0.5)?
            } else {
                fit_linear(&data, pop, LinearOptions::default())?
            };
            let estimated = fitted.point_rewards(pop)?;
            let (policy_hat, _) = solve_policy(pop, &estimated, spec)?;
            let gap = opt_value - utility(&policy_hat, pop, &truth, spec)?;
            Ok(gap < epsilon)
        })
        .collect();
    let successes = successes?;
    Ok(successes.iter().filter(|&&s| s).count() as f64 / reps as f64)
}
