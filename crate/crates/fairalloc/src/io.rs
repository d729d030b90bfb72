//! File formats: population and policy documents, CSV tables, atomic writes.
//!
//! Populations travel as a versioned TOML document (`format = 1`) with
//! top-level `actions`, `groups`, `contexts`, and an optional
//! `outcome_model`. Policies use a companion document keyed by context id.
//! Floating-point values round-trip exactly: the writer emits shortest
//! representations that parse back to the same bits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{ExperimentTrace, Summary};
use crate::design::DesignDiagnostics;
use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::policy::{ParetoPoint, Policy, ReferencePoints};
use crate::population::{ContextSpec, OutcomeModel, Population};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct PopulationDoc {
    format: u32,
    actions: Vec<String>,
    groups: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome_model: Option<OutcomeModel>,
    contexts: Vec<ContextDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextDoc {
    id: String,
    prob: f64,
    groups: Vec<String>,
    costs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_rewards: Option<Vec<f64>>,
}

/// Serializes a population (and optionally its outcome model) to the
/// versioned document format.
pub fn population_to_toml(pop: &Population, model: Option<&OutcomeModel>) -> Result<String> {
    let doc = PopulationDoc {
        format: FORMAT_VERSION,
        actions: pop.actions.clone(),
        groups: pop.groups.clone(),
        outcome_model: model.cloned(),
        contexts: pop
            .contexts
            .iter()
            .map(|c| ContextDoc {
                id: c.id.clone(),
                prob: c.prob,
                groups: c.group_ids.iter().map(|&g| pop.groups[g].clone()).collect(),
                costs: c.costs.clone(),
                features: c.features.clone(),
                expected_rewards: c.expected_rewards.clone(),
            })
            .collect(),
    };
    Ok(toml::to_string(&doc)?)
}

/// Parses the population document format.
pub fn population_from_toml(text: &str) -> Result<(Population, Option<OutcomeModel>)> {
    let doc: PopulationDoc = toml::from_str(text)?;
    if doc.format != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported population format {} (expected {FORMAT_VERSION})",
            doc.format
        )));
    }
    let groups = doc.groups;
    let contexts = doc
        .contexts
        .into_iter()
        .map(|c| {
            let group_ids = c
                .groups
                .iter()
                .map(|name| {
                    groups
                        .iter()
                        .position(|g| g == name)
                        .ok_or_else(|| Error::Parse(format!("unknown group `{name}`")))
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(ContextSpec {
                id: c.id,
                prob: c.prob,
                group_ids,
                costs: c.costs,
                features: c.features,
                expected_rewards: c.expected_rewards,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pop = Population::new(doc.actions, groups, contexts)?;
    Ok((pop, doc.outcome_model))
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyDoc {
    format: u32,
    actions: Vec<String>,
    policy: Vec<PolicyRowDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyRowDoc {
    context: String,
    probs: Vec<f64>,
}

/// Serializes a policy keyed by context id.
pub fn policy_to_toml(pop: &Population, policy: &Policy) -> Result<String> {
    let doc = PolicyDoc {
        format: FORMAT_VERSION,
        actions: pop.actions.clone(),
        policy: pop
            .contexts
            .iter()
            .zip(policy.rows.iter())
            .map(|(c, row)| PolicyRowDoc {
                context: c.id.clone(),
                probs: row.clone(),
            })
            .collect(),
    };
    Ok(toml::to_string(&doc)?)
}

/// Parses a policy document against its population (rows may appear in any
/// order; every context must be covered).
pub fn policy_from_toml(text: &str, pop: &Population) -> Result<Policy> {
    let doc: PolicyDoc = toml::from_str(text)?;
    if doc.format != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported policy format {} (expected {FORMAT_VERSION})",
            doc.format
        )));
    }
    let mut rows = vec![None; pop.n_contexts()];
    for row in doc.policy {
        let idx = pop
            .contexts
            .iter()
            .position(|c| c.id == row.context)
            .ok_or_else(|| Error::Parse(format!("unknown context `{}`", row.context)))?;
        rows[idx] = Some(row.probs);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| {
                Error::Parse(format!("missing policy row for `{}`", pop.contexts[i].id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Policy::new(rows)
}

/// Writes `bytes` to `path` atomically: a temporary sibling file is renamed
/// over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Dataset CSV: `iter,context_id,action,outcome,cost,method,rep`.
pub fn dataset_to_csv(data: &Dataset, pop: &Population) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iter", "context_id", "action", "outcome", "cost", "method", "rep"])?;
    for r in &data.records {
        w.write_record([
            r.iter.to_string(),
            pop.contexts[r.context].id.clone(),
            r.action.to_string(),
            r.outcome.to_string(),
            r.cost.to_string(),
            data.method.clone(),
            data.rep.to_string(),
        ])?;
    }
    finish_csv(w)
}

/// Per-step trace CSV across replications.
pub fn trace_to_csv(trace: &ExperimentTrace, pop: &Population) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "rep",
        "i",
        "method",
        "context_id",
        "action",
        "outcome",
        "cost",
        "nominal_budget",
        "realized_utility",
        "oracle_utility",
        "warmup",
        "lp_fallback",
    ])?;
    for rep in &trace.reps {
        for r in &rep.records {
            w.write_record([
                r.rep.to_string(),
                r.step.to_string(),
                trace.method.name().to_string(),
                pop.contexts[r.context].id.clone(),
                r.action.to_string(),
                r.outcome.to_string(),
                r.cost.to_string(),
                r.nominal_budget.to_string(),
                r.realized_utility.to_string(),
                r.oracle_utility.to_string(),
                (r.warmup as u8).to_string(),
                (r.lp_fallback as u8).to_string(),
            ])?;
        }
    }
    finish_csv(w)
}

/// Summary CSV: regret curve at every step, percent-of-optimal at snapshot
/// steps (empty otherwise).
pub fn summary_to_csv(summary: &Summary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "i",
        "mean_cum_regret",
        "se_cum_regret",
        "pct_of_optimal",
        "se_pct_of_optimal",
    ])?;
    let mut pct_at: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
    for p in &summary.pct_of_optimal {
        pct_at.insert(p.step, (p.mean, p.se));
    }
    for p in &summary.regret_curve {
        let (pct, pct_se) = match pct_at.get(&p.step) {
            Some(&(m, s)) => (m.to_string(), s.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            summary.method.name().to_string(),
            p.step.to_string(),
            p.mean.to_string(),
            p.se.to_string(),
            pct,
            pct_se,
        ])?;
    }
    finish_csv(w)
}

/// Per-group spend summary CSV.
pub fn spend_to_csv(summary: &Summary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "group", "mean_spend", "disparity"])?;
    for g in &summary.group_spend {
        w.write_record([
            summary.method.name().to_string(),
            g.group.clone(),
            g.mean_spend.to_string(),
            g.disparity.to_string(),
        ])?;
    }
    finish_csv(w)
}

/// Frontier CSV: `q,appearances,penalty,utility,feasible`; `utility` is
/// `appearances - lambda * penalty`.
pub fn frontier_to_csv(points: &[ParetoPoint], lambda: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["q", "appearances", "penalty", "utility", "feasible"])?;
    for p in points {
        match (p.expected_appearances, p.parity_gap) {
            (Some(a), Some(gap)) => w.write_record([
                p.target_allocation.to_string(),
                a.to_string(),
                gap.to_string(),
                (a - lambda * gap).to_string(),
                "1".into(),
            ])?,
            _ => w.write_record([
                p.target_allocation.to_string(),
                String::new(),
                String::new(),
                String::new(),
                "0".into(),
            ])?,
        }
    }
    finish_csv(w)
}

/// Reference points CSV, sharing the frontier's column contract plus the
/// point label and the equal-FNR diagnostics.
pub fn reference_points_to_csv(points: &ReferencePoints, lambda: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "point",
        "q",
        "appearances",
        "penalty",
        "utility",
        "feasible",
        "fnr_target",
        "fnr_other",
    ])?;
    let mut row = |name: &str, q: f64, appearances: f64, gap: f64, fnr: Option<(f64, f64)>| {
        w.write_record([
            name.to_string(),
            q.to_string(),
            appearances.to_string(),
            gap.to_string(),
            (appearances - lambda * gap).to_string(),
            "1".into(),
            fnr.map(|f| f.0.to_string()).unwrap_or_default(),
            fnr.map(|f| f.1.to_string()).unwrap_or_default(),
        ])
    };
    row(
        "random_allocation",
        points.random_allocation.target_allocation,
        points.random_allocation.expected_appearances,
        points.random_allocation.parity_gap,
        None,
    )?;
    row(
        "parity",
        points.parity.target_allocation,
        points.parity.expected_appearances,
        points.parity.parity_gap,
        None,
    )?;
    row(
        "max_appearance",
        points.max_appearance.target_allocation,
        points.max_appearance.expected_appearances,
        points.max_appearance.parity_gap,
        None,
    )?;
    row(
        "equal_fnr",
        points.equal_fnr.target_allocation,
        points.equal_fnr.expected_appearances,
        points.equal_fnr.parity_gap,
        Some((points.equal_fnr.fnr_target, points.equal_fnr.fnr_other)),
    )?;
    finish_csv(w)
}

/// One-row design diagnostics CSV.
pub fn design_diagnostics_to_csv(diag: &DesignDiagnostics) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["logdet", "g", "c", "rho0"])?;
    w.write_record([
        diag.log_det.to_string(),
        diag.g_value.to_string(),
        diag.c_value.to_string(),
        diag.rho0.to_string(),
    ])?;
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Parse(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("csv utf8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::structural::{self, StructuralConfig};
    use crate::population::stylized;

    #[test]
    fn population_roundtrip_is_bit_exact() {
        let cfg = StructuralConfig {
            size: 25,
            store_latent: true,
            ..Default::default()
        };
        let (pop, model) = structural::generate(&cfg, 5).unwrap();
        let text = population_to_toml(&pop, Some(&model)).unwrap();
        let (pop2, model2) = population_from_toml(&text).unwrap();
        assert_eq!(pop, pop2);
        assert_eq!(Some(model), model2);
        // And a second serialization produces identical bytes.
        let text2 = population_to_toml(&pop2, model2.as_ref()).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn policy_roundtrip() {
        let (pop, _) = stylized::generate(8, 3).unwrap();
        let policy = Policy::new(
            (0..8)
                .map(|i| {
                    let p = i as f64 / 10.0;
                    vec![1.0 - p, p]
                })
                .collect(),
        )
        .unwrap();
        let text = policy_to_toml(&pop, &policy).unwrap();
        let parsed = policy_from_toml(&text, &pop).unwrap();
        assert_eq!(policy, parsed);
    }

    #[test]
    fn format_version_checked() {
        let (pop, _) = stylized::generate(3, 1).unwrap();
        let text = population_to_toml(&pop, None).unwrap();
        let bad = text.replacen("format = 1", "format = 2", 1);
        assert!(matches!(
            population_from_toml(&bad),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn csv_has_header_and_quotes_when_needed() {
        let mut data = Dataset {
            records: vec![crate::estimators::Record {
                iter: 1,
                context: 0,
                action: 1,
                outcome: 1.0,
                cost: 2.5,
            }],
            method: "a,b".into(), // forces quoting
            rep: 0,
        };
        let (pop, _) = stylized::generate(2, 1).unwrap();
        let csv = dataset_to_csv(&data, &pop).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,context_id,action,outcome,cost,method,rep"
        );
        assert!(csv.contains("\"a,b\""));
        data.records.clear();
        let empty = dataset_to_csv(&data, &pop).unwrap();
        assert_eq!(empty.lines().count(), 1);
    }

    mod roundtrip_properties {
        use super::*;
        use crate::population::{ContextSpec, Population};
        use proptest::prelude::*;

        fn arbitrary_population() -> impl Strategy<Value = Population> {
            (1usize..5, 1usize..4).prop_flat_map(|(n, k)| {
                let ctx = (
                    0.01f64..10.0,
                    proptest::collection::vec(0.0f64..100.0, k),
                    proptest::collection::vec(
                        proptest::collection::vec(-10.0f64..10.0, 2),
                        k,
                    ),
                );
                proptest::collection::vec(ctx, n).prop_map(move |specs| {
                    let total: f64 = specs.iter().map(|s| s.0).sum();
                    let contexts = specs
                        .into_iter()
                        .enumerate()
                        .map(|(i, (w, costs, feats))| ContextSpec {
                            id: format!("c{i}"),
                            prob: w / total,
                            group_ids: vec![i % 2],
                            costs,
                            features: Some(feats),
                            expected_rewards: None,
                        })
                        .collect();
                    Population::new(
                        (0..k).map(|a| format!("a{a}")).collect(),
                        vec!["g0".into(), "g1".into()],
                        contexts,
                    )
                    .unwrap()
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn population_documents_roundtrip_bit_exactly(pop in arbitrary_population()) {
                let text = population_to_toml(&pop, None).unwrap();
                let (parsed, _) = population_from_toml(&text).unwrap();
                prop_assert_eq!(&pop, &parsed);
                let again = population_to_toml(&parsed, None).unwrap();
                prop_assert_eq!(text, again);
            }
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert!(!path.with_extension("txt.tmp").exists());
    }
}
