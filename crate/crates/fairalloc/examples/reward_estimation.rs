//! Reward-model estimation and posterior summaries.
//!
//! Simulates logged decisions from a logistic ground truth, fits the
//! penalized MLE with its Laplace posterior, and prints point, sampled, and
//! optimistic reward estimates for a few cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairalloc::estimators::{fit_logistic, Dataset, Record};
use fairalloc::population::{logistic, ContextSpec, Population};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let theta_true = [0.4, -0.9, 1.2];
    let n_contexts = 30;
    let contexts = (0..n_contexts)
        .map(|i| {
            let base = rng.gen_range(-1.0..1.0);
            ContextSpec {
                id: format!("x{i}"),
                prob: 1.0 / n_contexts as f64,
                group_ids: vec![0],
                costs: vec![0.0, 1.0],
                features: Some(vec![vec![1.0, base, 0.0], vec![1.0, base, 1.0]]),
                expected_rewards: None,
            }
        })
        .collect();
    let pop = Population::new(
        vec!["none".into(), "treat".into()],
        vec!["all".into()],
        contexts,
    )?;

    let mut records = Vec::new();
    for i in 0..2000 {
        let x = rng.gen_range(0..n_contexts);
        let a = rng.gen_range(0..2);
        let phi = pop.feature(x, a)?;
        let p = logistic(phi.iter().zip(theta_true.iter()).map(|(u, v)| u * v).sum());
        records.push(Record {
            iter: i,
            context: x,
            action: a,
            outcome: if rng.gen::<f64>() < p { 1.0 } else { 0.0 },
            cost: 0.0,
        });
    }
    let data = Dataset {
        records,
        method: "example".into(),
        rep: 0,
    };

    let fit = fit_logistic(&data, &pop, 1.0 / (2.5 * 2.5), None)?;
    let p = fit.as_parametric().unwrap();
    println!("true theta      {theta_true:?}");
    let est: Vec<String> = p.theta.iter().map(|v| format!("{v:.3}")).collect();
    println!("fitted theta    [{}]", est.join(", "));

    let point = fit.point_rewards(&pop)?;
    let draw = fit.draw_rewards(&pop, &mut rng)?;
    let upper = fit.optimistic_rewards(&pop, 0.975)?;
    println!("\ncell (context, action=treat): point / posterior draw / 97.5th percentile");
    for x in [0, 7, 19] {
        println!(
            "  x{x}: {:.4} / {:.4} / {:.4}",
            point[x][1], draw[x][1], upper[x][1]
        );
    }
    println!("\nmedian percentile equals the point estimate:");
    println!(
        "  x0 treat: {:.6} vs {:.6}",
        fit.optimistic_estimate(&pop, 0.5, 0, 1)?,
        point[0][1]
    );
    Ok(())
}
