//! Stylized two-group population for trade-off analysis.
//!
//! Each individual has one observable covariate `X ~ Unif(0,1)` and a group
//! `G ~ Bernoulli(0.5)`. Potential outcomes under the binary action come
//! from a shared latent uniform:
//!
//! `Y(a) = 1{ U <= logistic((1 + a) X + (1 - G) X a - 1) }`
//!
//! so treatment never hurts, and the `G = 1` ("target") group has a lower
//! average treatment effect. Treatment has unit cost; doing nothing is free.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ContextSpec, OutcomeModel, Population};
use crate::error::{Error, Result};

/// Group index of the `G = 0` (higher treatment effect) group.
pub const GROUP_REFERENCE: usize = 0;
/// Group index of the `G = 1` (lower treatment effect, "target") group.
pub const GROUP_TARGET: usize = 1;

/// Samples `n` individuals and returns the empirical population (uniform
/// probabilities, unit treatment costs) together with its structural outcome
/// model. Latent draws are stored, so realized potential outcomes are
/// available. Deterministic in `(n, seed)`.
pub fn generate(n: usize, seed: u64) -> Result<(Population, OutcomeModel)> {
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prob = 1.0 / n as f64;
    let mut contexts = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = rng.gen();
        let target = rng.gen_bool(0.5);
        let u: f64 = rng.gen();
        let g = if target { 1.0 } else { 0.0 };
        let control_logit = x - 1.0;
        let treated_logit = 2.0 * x + (1.0 - g) * x - 1.0;
        contexts.push(ContextSpec {
            id: format!("i{i:06}"),
            prob,
            group_ids: vec![if target { GROUP_TARGET } else { GROUP_REFERENCE }],
            costs: vec![0.0, 1.0],
            features: None,
            expected_rewards: None,
        });
        logits.push(vec![control_logit, treated_logit]);
        latent.push(u);
    }
    let pop = Population::new(
        vec!["none".into(), "treat".into()],
        vec!["reference".into(), "target".into()],
        contexts,
    )?;
    let model = OutcomeModel::Structural {
        logits,
        latent: Some(latent),
    };
    Ok((pop, model))
}
