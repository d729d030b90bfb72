//! Command-line front end.
//!
//! Thin dispatch over the library: `gen`, `optimize`, `pareto`, `design`,
//! `bounds`, `simulate`, and `verify`. Outputs are written atomically
//! (temporary file plus rename). Exit codes: 0 success, 2 infeasible
//! problem, 3 input or parse error, 4 numerical failure. Simulation and
//! verification never seed from the clock: a seed must come from `--seed`
//! or the config file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bandit::{self, LearnerConfig, Method, ModelKind, WarmupSpec};
use crate::chart::{line_chart, Series};
use crate::design::{self, BoundQuery, CollectionStrategy};
use crate::error::{Error, Result};
use crate::io;
use crate::policy;
use crate::population::structural::StructuralConfig;
use crate::population::{
    expected_rewards, OutcomeModel, Population, RewardFunction, RewardMatrix, RewardSpec,
    UtilitySpec,
};

#[derive(Parser)]
#[command(
    name = "fairalloc",
    version,
    about = "Budget-constrained, parity-penalized allocation policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population file from a generator config.
    Gen(GenArgs),
    /// Solve the budgeted policy optimization for a population file.
    Optimize(OptimizeArgs),
    /// Trace the allocation/outcome trade-off frontier with reference points.
    Pareto(ParetoArgs),
    /// Compute a G-optimal data-collection design and its diagnostics.
    Design(DesignArgs),
    /// Evaluate a sample-size bound and print the expression used.
    Bounds(BoundsArgs),
    /// Run the online policy-learning simulation.
    Simulate(SimulateArgs),
    /// Empirically verify a sample-size bound by replication.
    Verify(VerifyArgs),
}

/// Parses `argv` and runs the requested subcommand, returning the process
/// exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    configure_threads_from_env();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Optimize(a) => run_optimize(a),
        Command::Pareto(a) => run_pareto(a),
        Command::Design(a) => run_design(a),
        Command::Bounds(a) => run_bounds(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Caps the rayon worker count from `FAIRALLOC_THREADS` when set.
pub fn configure_threads_from_env() {
    if let Ok(v) = std::env::var("FAIRALLOC_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasibleBudget { .. } => 2,
        Error::NonConvergence { .. }
        | Error::DegenerateDesign
        | Error::NumericalFailure { .. }
        | Error::RankDeficient { .. }
        | Error::PctOfOptimalUndefined
        | Error::FnrUndefined { .. } => 4,
        _ => 3,
    }
}

// ---------------------------------------------------------------------------
// gen

#[derive(Args)]
struct GenArgs {
    /// Generator config file (TOML with a `kind` key).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Output file name.
    #[arg(long, default_value = "population.toml")]
    name: String,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GenConfig {
    Structural(StructuralConfig),
    Stylized { size: usize },
}

fn load_gen_config(path: &Path) -> Result<GenConfig> {
    let text = std::fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

fn generate_population(cfg: &GenConfig, seed: u64) -> Result<(Population, OutcomeModel)> {
    match cfg {
        GenConfig::Structural(c) => crate::population::structural::generate(c, seed),
        GenConfig::Stylized { size } => crate::population::stylized::generate(*size, seed),
    }
}

fn run_gen(a: GenArgs) -> Result<()> {
    let cfg = load_gen_config(&a.config)?;
    let (pop, model) = generate_population(&cfg, a.seed)?;
    let text = io::population_to_toml(&pop, Some(&model))?;
    let path = a.out.join(&a.name);
    io::atomic_write(&path, text.as_bytes())?;
    println!(
        "wrote {} ({} contexts, {} actions, {} groups)",
        path.display(),
        pop.n_contexts(),
        pop.n_actions(),
        pop.groups.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Args)]
struct OptimizeArgs {
    /// Population file.
    #[arg(long)]
    population: PathBuf,
    /// Per-capita budget.
    #[arg(long)]
    budget: f64,
    /// Parity weight as `group=weight`; repeatable.
    #[arg(long = "lambda", value_parser = parse_lambda)]
    lambdas: Vec<(String, f64)>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also dump the LP in text interchange format.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

fn parse_lambda(s: &str) -> std::result::Result<(String, f64), String> {
    let (g, w) = s
        .split_once('=')
        .ok_or_else(|| format!("expected group=weight, got `{s}`"))?;
    let w: f64 = w.parse().map_err(|e| format!("bad weight in `{s}`: {e}"))?;
    Ok((g.to_string(), w))
}

fn load_population(path: &Path) -> Result<(Population, Option<OutcomeModel>)> {
    let text = std::fs::read_to_string(path)?;
    io::population_from_toml(&text)
}

/// Expected rewards for a loaded population: embedded values win, otherwise
/// the outcome model is evaluated under the identity reward.
fn resolve_rewards(pop: &Population, model: Option<&OutcomeModel>) -> Result<RewardMatrix> {
    if let Some(m) = pop.embedded_rewards() {
        return Ok(m);
    }
    let model = model.ok_or_else(|| {
        Error::Parse("population has neither expected_rewards nor an outcome_model".into())
    })?;
    expected_rewards(pop, &RewardFunction::OutcomeIdentity, model)
}

fn run_optimize(a: OptimizeArgs) -> Result<()> {
    let (pop, model) = load_population(&a.population)?;
    let rewards = resolve_rewards(&pop, model.as_ref())?;
    let spec = UtilitySpec {
        reward: RewardSpec::Matrix(rewards.clone()),
        parity_weights: a.lambdas.into_iter().collect(),
        budget: a.budget,
    };
    if let Some(path) = &a.dump_lp {
        let built = policy::build_policy_lp(&pop, &rewards, &spec)?;
        io::atomic_write(path, built.lp.to_lp_format().as_bytes())?;
    }
    let (policy, value) = policy::solve_policy(&pop, &rewards, &spec)?;
    let doc = io::policy_to_toml(&pop, &policy)?;
    io::atomic_write(&a.out.join("policy.toml"), doc.as_bytes())?;
    println!("utility {value:.6}");
    println!("policy written to {}", a.out.join("policy.toml").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pareto

#[derive(Args)]
struct ParetoArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    budget: f64,
    /// Name of the target group (defaults to the second group).
    #[arg(long)]
    target: Option<String>,
    /// Number of evenly spaced allocation shares in [0, 1].
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Parity weight for the utility column.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also render an SVG of the frontier.
    #[arg(long)]
    svg: bool,
}

fn run_pareto(a: ParetoArgs) -> Result<()> {
    let (pop, model) = load_population(&a.population)?;
    let rewards = resolve_rewards(&pop, model.as_ref())?;
    let target = match &a.target {
        Some(name) => pop
            .group_index(name)
            .ok_or_else(|| Error::Parse(format!("unknown group `{name}`")))?,
        None => 1,
    };
    let grid: Vec<f64> = (0..a.grid)
        .map(|i| i as f64 / (a.grid.max(2) - 1) as f64)
        .collect();
    let points = policy::pareto_frontier(&pop, &rewards, a.budget, target, &grid, false)?;
    io::atomic_write(
        &a.out.join("frontier.csv"),
        io::frontier_to_csv(&points, a.lambda)?.as_bytes(),
    )?;

    let has_latent = model
        .as_ref()
        .map(|m| m.realized_outcomes(&pop, 0).is_some())
        .unwrap_or(false);
    if has_latent {
        let refs = policy::reference_points(
            &pop,
            model.as_ref().expect("latent implies model"),
            &rewards,
            a.budget,
            target,
        )?;
        io::atomic_write(
            &a.out.join("reference_points.csv"),
            io::reference_points_to_csv(&refs, a.lambda)?.as_bytes(),
        )?;
    } else {
        eprintln!("no realized potential outcomes; skipping reference points");
    }

    if a.svg {
        let feasible: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| p.expected_appearances.map(|v| (p.target_allocation, v)))
            .collect();
        let svg = line_chart(
            "Allocation/outcome frontier",
            "target-group treatment share",
            "expected appearances",
            &[Series::new("frontier", feasible)],
        );
        io::atomic_write(&a.out.join("frontier.svg"), svg.as_bytes())?;
    }
    println!(
        "frontier written to {} ({} grid points)",
        a.out.join("frontier.csv").display(),
        a.grid
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// design

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    population: PathBuf,
    /// Convergence tolerance on `g(pi) - d`.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn run_design(a: DesignArgs) -> Result<()> {
    let (pop, _) = load_population(&a.population)?;
    let design = design::g_optimal_design(&pop, a.tol, a.max_iter)?;
    let diag = design::DesignDiagnostics {
        log_det: design.log_det,
        g_value: design.g_value,
        c_value: design.c_value,
        rho0: design.rho0,
    };
    io::atomic_write(
        &a.out.join("design_policy.toml"),
        io::policy_to_toml(&pop, &design.policy)?.as_bytes(),
    )?;
    io::atomic_write(
        &a.out.join("design_diagnostics.csv"),
        io::design_diagnostics_to_csv(&diag)?.as_bytes(),
    )?;
    println!(
        "design: logdet {:.6}, g {:.8}, c {:.8}, rho0 {:.6} ({} iterations)",
        design.log_det, design.g_value, design.c_value, design.rho0, design.iterations
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bounds

#[derive(Args)]
struct BoundsArgs {
    /// Bound variant: tabular, linear, or logistic.
    #[arg(long)]
    variant: String,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of contexts (tabular).
    #[arg(long)]
    contexts: Option<usize>,
    /// Number of actions (tabular).
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    p_min: Option<f64>,
    /// Feature dimension (linear, logistic).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rho0: Option<f64>,
    /// Prediction-variance constant c (linear optional, logistic required).
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    k0: Option<f64>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Multiplier standing in for unspecified big-O constants.
    #[arg(long)]
    constant: Option<f64>,
    /// Population file with features: used to compute `c` and `rho0` from a
    /// G-optimal design when they are not supplied directly.
    #[arg(long)]
    population: Option<PathBuf>,
}

fn missing(name: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value: f64::NAN,
        requirement: "required for this variant",
    }
}

fn run_bounds(a: BoundsArgs) -> Result<()> {
    // With a population at hand, leverage constants come from its G-optimal
    // design instead of manual flags.
    let design_stats = match &a.population {
        Some(path) => {
            let (pop, _) = load_population(path)?;
            let design = design::g_optimal_design(&pop, 1e-6, 5000)?;
            eprintln!(
                "design constants from G-optimal design: c = {:.6}, rho0 = {:.6}, d = {}",
                design.c_value,
                design.rho0,
                pop.feature_dim().unwrap_or(0)
            );
            Some((design.c_value, design.rho0, pop.feature_dim()))
        }
        None => None,
    };
    let from_design_c = a.c.or(design_stats.as_ref().map(|s| s.0));
    let from_design_rho0 = a.rho0.or(design_stats.as_ref().map(|s| s.1));
    let from_design_d = a.dim.or(design_stats.as_ref().and_then(|s| s.2));
    let query = match a.variant.as_str() {
        "tabular" => BoundQuery::Tabular {
            sigma: a.sigma.ok_or_else(|| missing("sigma"))?,
            epsilon: a.epsilon,
            delta: a.delta,
            n_contexts: a.contexts.ok_or_else(|| missing("contexts"))?,
            n_actions: a.actions.ok_or_else(|| missing("actions"))?,
            p_min: a.p_min.ok_or_else(|| missing("p_min"))?,
        },
        "linear" => BoundQuery::Linear {
            sigma: a.sigma.ok_or_else(|| missing("sigma"))?,
            epsilon: a.epsilon,
            delta: a.delta,
            d: from_design_d.ok_or_else(|| missing("dim"))?,
            rho0: from_design_rho0.ok_or_else(|| missing("rho0"))?,
            c: from_design_c,
            constant: a.constant,
        },
        "logistic" => BoundQuery::Logistic {
            epsilon: a.epsilon,
            delta: a.delta,
            d: from_design_d.ok_or_else(|| missing("dim"))?,
            k0: a.k0.ok_or_else(|| missing("k0"))?,
            k1: a.k1.ok_or_else(|| missing("k1"))?,
            k2: a.k2.ok_or_else(|| missing("k2"))?,
            rho: a.rho.ok_or_else(|| missing("rho"))?,
            c: from_design_c.ok_or_else(|| missing("c"))?,
            constant: a.constant,
        },
        other => {
            return Err(Error::Parse(format!(
                "unknown variant `{other}` (expected tabular, linear, or logistic)"
            )))
        }
    };
    let result = design::sample_bound(&query)?;
    println!("n = {}", result.n);
    println!("{}", result.expression);
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config file.
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides the config's `seed` key. One of the two must be
    /// present.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also render regret and percent-of-optimal charts.
    #[arg(long)]
    svg: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfig {
    method: Method,
    n: usize,
    reps: usize,
    seed: Option<u64>,
    lambda: f64,
    /// Groups the parity weight applies to (default: every group).
    parity_groups: Option<Vec<String>>,
    budget: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_percentile")]
    ucb_percentile: f64,
    #[serde(default = "default_warmup")]
    warmup: usize,
    #[serde(default)]
    warmup_require: Vec<String>,
    stop_n: Option<usize>,
    #[serde(default = "default_snapshot")]
    snapshot_every: usize,
    #[serde(default = "default_candidates")]
    candidate_size: usize,
    #[serde(default = "default_model")]
    model: ModelKind,
    prior_precision: Option<f64>,
    /// Inline generator for the population, or a path to a population file
    /// with an outcome model.
    population: Option<GenConfig>,
    population_path: Option<PathBuf>,
    #[serde(default)]
    population_seed: u64,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_percentile() -> f64 {
    0.975
}
fn default_warmup() -> usize {
    4
}
fn default_snapshot() -> usize {
    50
}
fn default_candidates() -> usize {
    1000
}
fn default_model() -> ModelKind {
    ModelKind::Logistic
}

/// Resolves a config-relative path against the config file's directory.
fn relative_to(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config.parent().unwrap_or_else(|| Path::new(".")).join(path)
    }
}

fn sim_population(cfg: &SimConfig, config_path: &Path) -> Result<(Population, OutcomeModel)> {
    match (&cfg.population, &cfg.population_path) {
        (Some(gen), None) => generate_population(gen, cfg.population_seed),
        (None, Some(path)) => {
            let (pop, model) = load_population(&relative_to(config_path, path))?;
            let model = model.ok_or_else(|| {
                Error::Parse("population file has no outcome_model; simulation needs one".into())
            })?;
            Ok((pop, model))
        }
        _ => Err(Error::Parse(
            "config needs exactly one of `population` (inline) or `population_path`".into(),
        )),
    }
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)?;
    let cfg: SimConfig = toml::from_str(&text)?;
    let seed = a.seed.or(cfg.seed).ok_or_else(|| {
        Error::Parse("no seed: pass --seed or set `seed` in the config (no wall-clock seeding)".into())
    })?;
    let (pop, model) = sim_population(&cfg, &a.config)?;

    let mut parity_weights = BTreeMap::new();
    let groups = cfg
        .parity_groups
        .clone()
        .unwrap_or_else(|| pop.groups.clone());
    for g in groups {
        parity_weights.insert(g, cfg.lambda);
    }
    let spec = UtilitySpec {
        reward: RewardSpec::Function(RewardFunction::OutcomeIdentity),
        parity_weights,
        budget: cfg.budget,
    };
    let learner = LearnerConfig {
        method: cfg.method,
        model: cfg.model,
        epsilon: cfg.epsilon,
        ucb_percentile: cfg.ucb_percentile,
        warmup: WarmupSpec {
            len: cfg.warmup,
            require_groups: cfg.warmup_require.clone(),
        },
        stop_n: cfg.stop_n,
        prior_precision: cfg.prior_precision.unwrap_or(1.0 / (2.5 * 2.5)),
        candidate_size: cfg.candidate_size,
        snapshot_every: cfg.snapshot_every,
        ..Default::default()
    };
    let trace = bandit::run_experiment(&pop, &model, &spec, &learner, cfg.n, cfg.reps, seed)?;
    let summary = bandit::summarize(&trace, &pop, spec.budget)?;

    io::atomic_write(
        &a.out.join("trace.csv"),
        io::trace_to_csv(&trace, &pop)?.as_bytes(),
    )?;
    io::atomic_write(
        &a.out.join("summary.csv"),
        io::summary_to_csv(&summary)?.as_bytes(),
    )?;
    io::atomic_write(
        &a.out.join("spend.csv"),
        io::spend_to_csv(&summary)?.as_bytes(),
    )?;

    if a.svg {
        let regret = Series::new(
            cfg.method.name(),
            summary
                .regret_curve
                .iter()
                .map(|p| (p.step as f64, p.mean))
                .collect(),
        )
        .with_band(
            summary
                .regret_curve
                .iter()
                .map(|p| (p.mean - 1.96 * p.se, p.mean + 1.96 * p.se))
                .collect(),
        );
        io::atomic_write(
            &a.out.join("regret.svg"),
            line_chart("Mean cumulative regret", "individual", "regret", &[regret]).as_bytes(),
        )?;
        let pct = Series::new(
            cfg.method.name(),
            summary
                .pct_of_optimal
                .iter()
                .map(|p| (p.step as f64, p.mean))
                .collect(),
        )
        .with_band(
            summary
                .pct_of_optimal
                .iter()
                .map(|p| (p.mean - 1.96 * p.se, p.mean + 1.96 * p.se))
                .collect(),
        );
        io::atomic_write(
            &a.out.join("pct_of_optimal.svg"),
            line_chart(
                "Learned-policy performance",
                "individual",
                "percent of optimal",
                &[pct],
            )
            .as_bytes(),
        )?;
    }

    let last = summary.regret_curve.last().expect("nonempty");
    println!(
        "{}: {} reps x {} steps; final mean cumulative regret {:.4} (se {:.4}); mean spend {:.4}",
        cfg.method.name(),
        cfg.reps,
        cfg.n,
        last.mean,
        last.se,
        summary.mean_spend
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides the config's `seed` key. One of the two must be
    /// present.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    bound: BoundQuery,
    reps: usize,
    seed: Option<u64>,
    budget: f64,
    #[serde(default)]
    lambda: f64,
    parity_groups: Option<Vec<String>>,
    population: Option<GenConfig>,
    population_path: Option<PathBuf>,
    #[serde(default)]
    population_seed: u64,
    /// `round_robin` (default) or `g_optimal`.
    collection: Option<String>,
}

fn run_verify(a: VerifyArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)?;
    let cfg: VerifyConfig = toml::from_str(&text)?;
    let seed = a.seed.or(cfg.seed).ok_or_else(|| {
        Error::Parse("no seed: pass --seed or set `seed` in the config (no wall-clock seeding)".into())
    })?;
    let (pop, model) = match (&cfg.population, &cfg.population_path) {
        (Some(gen), None) => generate_population(gen, cfg.population_seed)?,
        (None, Some(path)) => {
            let (pop, model) = load_population(&relative_to(&a.config, path))?;
            let model = model.ok_or_else(|| {
                Error::Parse("population file has no outcome_model".into())
            })?;
            (pop, model)
        }
        _ => {
            return Err(Error::Parse(
                "config needs exactly one of `population` or `population_path`".into(),
            ))
        }
    };
    let mut parity_weights = BTreeMap::new();
    for g in cfg.parity_groups.clone().unwrap_or_default() {
        parity_weights.insert(g, cfg.lambda);
    }
    let spec = UtilitySpec {
        reward: RewardSpec::Function(RewardFunction::OutcomeIdentity),
        parity_weights,
        budget: cfg.budget,
    };
    let collection = match cfg.collection.as_deref() {
        None | Some("round_robin") => CollectionStrategy::RoundRobin,
        Some("g_optimal") => {
            let d = design::g_optimal_design(&pop, 1e-6, 5000)?;
            CollectionStrategy::Design(d.policy)
        }
        Some(other) => {
            return Err(Error::Parse(format!(
                "unknown collection strategy `{other}`"
            )))
        }
    };
    let bound = design::sample_bound(&cfg.bound)?;
    let fraction = design::verify_bound_empirically(
        &pop,
        &model,
        &spec,
        &cfg.bound,
        &collection,
        cfg.reps,
        seed,
    )?;
    println!("n = {} per replication", bound.n);
    println!("{}", bound.expression);
    println!("success fraction {fraction:.4} over {} replications", cfg.reps);
    Ok(())
}
