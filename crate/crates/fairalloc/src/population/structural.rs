//! Synthetic client population with a structural outcome model.
//!
//! Individuals carry demographic and case attributes drawn from configurable
//! independent distributions. The baseline appearance logit is a linear
//! function of those attributes; rideshare assistance shifts the logit by a
//! constant, and a transit voucher shifts it proportionally to the (negative)
//! log-distance feature, so assistance never hurts. Costs: rides are priced
//! per mile of the round trip, vouchers at a flat rate, doing nothing is
//! free.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{ContextSpec, OutcomeModel, Population};
use crate::error::{Error, Result};

/// Coefficients of the baseline (no-assistance) appearance logit, applied to
/// the attribute feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineCoeffs {
    pub intercept: f64,
    pub vietnamese: f64,
    pub felony: f64,
    pub male: f64,
    /// Applies to age scaled as `(age - 40) / 10`.
    pub age: f64,
    /// Applies to the log-distance feature `ln(miles / max_miles) <= 0`.
    pub distance: f64,
    /// Applies to the count of failures to appear in the past two years.
    pub prior_failures: f64,
    /// Applies to `1 / (number of required appearances)`.
    pub inverse_appearances: f64,
}

impl Default for BaselineCoeffs {
    fn default() -> Self {
        BaselineCoeffs {
            intercept: 0.0,
            vietnamese: 1.0,
            felony: -0.4,
            male: -0.1,
            age: 0.15,
            distance: -0.5,
            prior_failures: -0.35,
            inverse_appearances: 0.3,
        }
    }
}

/// Sampling distributions for individual attributes. Attributes are drawn
/// independently except distance, whose distribution depends on the group to
/// keep the two groups geographically distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeConfig {
    pub vietnamese_rate: f64,
    pub felony_rate: f64,
    pub male_rate: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Log-normal parameters of miles to the courthouse, per group.
    pub miles_log_mean_vietnamese: f64,
    pub miles_log_sd_vietnamese: f64,
    pub miles_log_mean_other: f64,
    pub miles_log_sd_other: f64,
    /// Distances are clamped to `(min_miles, max_miles]`.
    pub min_miles: f64,
    pub max_miles: f64,
    /// Mean of the Poisson count of prior failures to appear.
    pub prior_failure_mean: f64,
    /// Required appearances are `1 + Poisson(appearances_mean)`.
    pub appearances_mean: f64,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        AttributeConfig {
            vietnamese_rate: 0.35,
            felony_rate: 0.40,
            male_rate: 0.75,
            age_mean: 35.0,
            age_sd: 12.0,
            miles_log_mean_vietnamese: 2.20, // ~9 miles
            miles_log_sd_vietnamese: 0.35,
            miles_log_mean_other: 1.39, // ~4 miles
            miles_log_sd_other: 0.55,
            min_miles: 0.5,
            max_miles: 20.0,
            prior_failure_mean: 0.8,
            appearances_mean: 1.5,
        }
    }
}

/// Configuration of the structural population generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuralConfig {
    /// Number of individuals.
    pub size: usize,
    /// Round-trip ride cost per mile of distance.
    pub cost_per_mile: f64,
    /// Flat cost of a transit voucher.
    pub voucher_cost: f64,
    /// Logit shift when rideshare assistance is provided; nonnegative.
    pub ride_effect: f64,
    /// Logit shift per unit of the log-distance feature when a voucher is
    /// provided; nonpositive, so the shift itself is nonnegative.
    pub voucher_distance_effect: f64,
    pub coeffs: BaselineCoeffs,
    pub attributes: AttributeConfig,
    /// Store a realized latent draw per individual, enabling realized
    /// potential outcomes.
    pub store_latent: bool,
}

impl Default for StructuralConfig {
    fn default() -> Self {
        StructuralConfig {
            size: 1000,
            cost_per_mile: 10.0,
            voucher_cost: 7.5,
            ride_effect: 4.0,
            voucher_distance_effect: -0.75,
            coeffs: BaselineCoeffs::default(),
            attributes: AttributeConfig::default(),
            store_latent: false,
        }
    }
}

pub const ACTION_NONE: usize = 0;
pub const ACTION_RIDE: usize = 1;
pub const ACTION_VOUCHER: usize = 2;

/// Generates a population of `cfg.size` individuals with uniform probability,
/// three actions `{none, rideshare, voucher}`, groups
/// `{vietnamese, white, male}`, per-action features, and a structural
/// outcome model. Deterministic in `(cfg, seed)`.
pub fn generate(cfg: &StructuralConfig, seed: u64) -> Result<(Population, OutcomeModel)> {
    if cfg.size == 0 {
        return Err(Error::EmptyPopulation);
    }
    if cfg.ride_effect < 0.0 {
        return Err(Error::InvalidParameter {
            name: "ride_effect",
            value: cfg.ride_effect,
            requirement: "must be nonnegative so assistance never hurts",
        });
    }
    if cfg.voucher_distance_effect > 0.0 {
        return Err(Error::InvalidParameter {
            name: "voucher_distance_effect",
            value: cfg.voucher_distance_effect,
            requirement: "must be nonpositive so assistance never hurts",
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = &cfg.attributes;
    let age_dist = Normal::new(at.age_mean, at.age_sd).expect("age distribution");
    let miles_viet = LogNormal::new(at.miles_log_mean_vietnamese, at.miles_log_sd_vietnamese)
        .expect("distance distribution");
    let miles_other = LogNormal::new(at.miles_log_mean_other, at.miles_log_sd_other)
        .expect("distance distribution");
    let failures = Poisson::new(at.prior_failure_mean.max(1e-12)).expect("failure distribution");
    let appearances = Poisson::new(at.appearances_mean.max(1e-12)).expect("appearance count");

    let n = cfg.size;
    let prob = 1.0 / n as f64;
    let mut contexts = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    let mut latent = if cfg.store_latent {
        Some(Vec::with_capacity(n))
    } else {
        None
    };

    for i in 0..n {
        let vietnamese = rng.gen_bool(at.vietnamese_rate);
        let felony = rng.gen_bool(at.felony_rate);
        let male = rng.gen_bool(at.male_rate);
        let age = age_dist.sample(&mut rng).clamp(18.0, 75.0);
        let miles = if vietnamese {
            miles_viet.sample(&mut rng)
        } else {
            miles_other.sample(&mut rng)
        }
        .clamp(at.min_miles, at.max_miles);
        let n_failures = failures.sample(&mut rng).min(6.0);
        let n_appearances = 1.0 + appearances.sample(&mut rng);

        let dist_feature = (miles / at.max_miles).ln();
        let base_features = [
            1.0,
            vietnamese as u8 as f64,
            felony as u8 as f64,
            male as u8 as f64,
            (age - 40.0) / 10.0,
            dist_feature,
            n_failures,
            1.0 / n_appearances,
        ];
        let c = &cfg.coeffs;
        let coeff_vec = [
            c.intercept,
            c.vietnamese,
            c.felony,
            c.male,
            c.age,
            c.distance,
            c.prior_failures,
            c.inverse_appearances,
        ];
        let base_logit: f64 = base_features
            .iter()
            .zip(coeff_vec.iter())
            .map(|(x, b)| x * b)
            .sum();

        // phi(x, k): attributes plus a ride indicator and a voucher-by-
        // distance interaction, matching the structural equation's shape.
        let mut features = Vec::with_capacity(3);
        for k in 0..3 {
            let mut phi = base_features.to_vec();
            phi.push(if k == ACTION_RIDE { 1.0 } else { 0.0 });
            phi.push(if k == ACTION_VOUCHER { dist_feature } else { 0.0 });
            features.push(phi);
        }

        let mut group_ids = vec![if vietnamese { 0 } else { 1 }];
        if male {
            group_ids.push(2);
        }

        contexts.push(ContextSpec {
            id: format!("c{i:05}"),
            prob,
            group_ids,
            costs: vec![0.0, cfg.cost_per_mile * miles, cfg.voucher_cost],
            features: Some(features),
            expected_rewards: None,
        });
        logits.push(vec![
            base_logit,
            base_logit + cfg.ride_effect,
            base_logit + cfg.voucher_distance_effect * dist_feature,
        ]);
        if let Some(u) = latent.as_mut() {
            u.push(rng.gen::<f64>());
        }
    }

    let pop = Population::new(
        vec!["none".into(), "rideshare".into(), "voucher".into()],
        vec!["vietnamese".into(), "white".into(), "male".into()],
        contexts,
    )?;
    let model = OutcomeModel::Structural { logits, latent };
    Ok((pop, model))
}
