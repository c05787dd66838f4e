//! Command-line front end: seeded, reproducible experiment runs with
//! JSON-lines records on stdout and a human summary on stderr.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use gibbs_perfect::extinction::{
    check_hypotheses, galton_watson, parse_spec, simulate, ExtinctionSpec,
};
use gibbs_perfect::model::{load_model, parse_policy_name, ModelFile};
use gibbs_perfect::optimize::{
    brute_force_min, check_h1, check_h2, mu_ising_closed_form, upsilon_refine, Condition,
    ConditionReport, OptimizationResult, SequenceDescriptor, DEFAULT_SEARCH_CAP,
};
use gibbs_perfect::oracle::{compare_empirical, exact_gibbs_finite_support};
use gibbs_perfect::sampler::{perfect_sample, SequenceStore};
use gibbs_perfect::sequence::{LambdaDistribution, SequencePolicy};
use gibbs_perfect::{CoreError, Interaction, Vertex};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde_json::json;
use std::path::PathBuf;
use std::sync::Arc;

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 2;
const EXIT_STEP_LIMIT: i32 = 3;
const EXIT_REQUIRE: i32 = 4;
const EXIT_VALIDATION: i32 = 5;

#[derive(Parser)]
#[command(
    name = "gibbs-perfect",
    about = "Perfect sampling from Gibbs measures of +-1 spin systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw perfect samples on a window of vertices
    Sample(SampleArgs),
    /// Enclose the birth-death expectation of a sequence at a vertex
    Mu(MuArgs),
    /// Search for mu-minimizing region sequences
    OptimizeSeq(OptimizeArgs),
    /// Evaluate the applicability conditions (H1)/(H2)
    Check(CheckArgs),
    /// Run generalized birth-death / Galton-Watson extinction experiments
    Extinct(ExtinctArgs),
    /// Compare sampler output against the exact finite-support oracle
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ModelArg {
    /// Model description file (TOML)
    #[arg(long)]
    model: PathBuf,
    /// Sequence policy: auto | ising_optimal | l1_balls | explicit
    #[arg(long, default_value = "auto")]
    seq: String,
}

impl ModelArg {
    fn load(&self) -> anyhow::Result<(ModelFile, SequencePolicy)> {
        let model = load_model(&self.model)?;
        let policy = resolve_policy(&self.seq, &model)?;
        Ok((model, policy))
    }
}

fn resolve_policy(name: &str, model: &ModelFile) -> anyhow::Result<SequencePolicy> {
    match name {
        "auto" => Ok(match &model.sequence {
            Some(p) => p.clone(),
            None => {
                if model.interaction.is_pairwise() {
                    SequencePolicy::IsingOptimal
                } else {
                    SequencePolicy::L1Balls
                }
            }
        }),
        "explicit" => model
            .sequence
            .clone()
            .filter(|p| matches!(p, SequencePolicy::Explicit(_)))
            .ok_or_else(|| anyhow!("--seq explicit needs a sequence table in the model file")),
        other => Ok(parse_policy_name(other)?),
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Window vertices, e.g. "0;1" or "0,0;1,0"
    #[arg(long)]
    window: String,
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: u64,
    /// Worker threads (0 = all cores); output order is by replica index
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Refuse to run unless this condition holds: h1 | h2
    #[arg(long)]
    require: Option<String>,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct MuArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Vertex, e.g. "0" or "0,1"
    #[arg(long, default_value = "0")]
    vertex: String,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    model: ModelArg,
    /// ising | brute | upsilon
    #[arg(long, default_value = "brute")]
    mode: String,
    #[arg(long, default_value = "0")]
    vertex: String,
    /// Cap on hyperedge count / refined block size
    #[arg(long, default_value_t = DEFAULT_SEARCH_CAP)]
    cap: usize,
    /// First-block index refined by the upsilon search
    #[arg(long, default_value_t = 1)]
    block: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArg,
    /// h1 | h2 | both
    #[arg(long, default_value = "both")]
    cond: String,
    /// Exit nonzero when this condition fails: h1 | h2
    #[arg(long)]
    require: Option<String>,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct ExtinctArgs {
    /// Tabulated birth-death spec file (TOML)
    #[arg(long, conflicts_with_all = ["gw", "model"])]
    spec: Option<PathBuf>,
    /// Galton-Watson offspring pmf, e.g. "0.45,0,0.55"
    #[arg(long, conflicts_with = "model")]
    gw: Option<String>,
    /// Spin model whose backward sketch chain is run as a birth-death chain
    #[arg(long, requires = "window")]
    model: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    seq: String,
    #[arg(long)]
    window: Option<String>,
    #[arg(long, default_value_t = 1000)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step cap per run (generation cap for --gw)
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: u64,
    /// Initial population for --gw runs
    #[arg(long, default_value_t = 1)]
    initial: u64,
    /// Report the supermartingale hypotheses with this margin delta
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long)]
    window: String,
    #[arg(long, default_value_t = 20_000)]
    replicas: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: u64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CoreError>() {
                Some(CoreError::StepLimitExceeded(_)) => EXIT_STEP_LIMIT,
                _ => EXIT_CONFIG,
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Sample(args) => sample(args),
        Command::Mu(args) => mu(args),
        Command::OptimizeSeq(args) => optimize_seq(args),
        Command::Check(args) => check(args),
        Command::Extinct(args) => extinct(args),
        Command::Validate(args) => validate(args),
    }
}

fn parse_vertex(text: &str, dim: usize) -> anyhow::Result<Vertex> {
    let coords = text
        .split(',')
        .map(|c| c.trim().parse::<i64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad vertex '{text}'"))?;
    if coords.len() != dim {
        bail!(
            "vertex '{text}' has {} coordinates, model dimension is {dim}",
            coords.len()
        );
    }
    Ok(Vertex::from_coords(&coords)?)
}

/// Parses "0;1" / "0,0;1,0" into a sorted, deduplicated window.
fn parse_window(text: &str, dim: usize) -> anyhow::Result<Vec<Vertex>> {
    let mut window = text
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_vertex(s, dim))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if window.is_empty() {
        bail!("window is empty");
    }
    window.sort_unstable();
    window.dedup();
    Ok(window)
}

fn replica_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn thread_pool(threads: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?)
}

fn interval_json(i: gibbs_perfect::Interval) -> serde_json::Value {
    json!({ "lo": i.lo, "hi": i.hi })
}

fn condition_json(r: &ConditionReport) -> serde_json::Value {
    json!({
        "schema": 1,
        "kind": "condition",
        "condition": r.condition.name(),
        "holds": r.holds,
        "witness": interval_json(r.witness),
        "vertex_class": r.vertex_class,
    })
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn require_condition(
    require: &str,
    interaction: &Arc<Interaction>,
    policy: &SequencePolicy,
    tolerance: f64,
) -> anyhow::Result<Option<i32>> {
    let report = match require {
        "h1" => check_h1(interaction, tolerance)?,
        "h2" => check_h2(interaction, policy, tolerance)?,
        other => bail!("unknown condition '{other}' (expected h1 or h2)"),
    };
    emit(condition_json(&report));
    if !report.holds {
        eprintln!(
            "required condition {} fails: witness [{}, {}]",
            report.condition.name(),
            report.witness.lo,
            report.witness.hi
        );
        return Ok(Some(EXIT_REQUIRE));
    }
    Ok(None)
}

fn sample(args: SampleArgs) -> anyhow::Result<i32> {
    let (model, policy) = args.model.load()?;
    let dim = model.interaction.dimension();
    let window = parse_window(&args.window, dim)?;
    if let Some(req) = &args.require {
        if let Some(code) = require_condition(req, &model.interaction, &policy, args.tolerance)? {
            return Ok(code);
        }
    }

    let store = Arc::new(SequenceStore::new(model.interaction.clone(), policy));
    let pool = thread_pool(args.threads)?;
    let results: Vec<gibbs_perfect::Result<_>> = pool.install(|| {
        (0..args.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(args.seed, i);
                perfect_sample(&window, &store, &mut rng, args.max_steps)
                    .map(|(sigma, diag)| (i, sigma, diag))
            })
            .collect()
    });

    let mut n_stop_sum = 0u64;
    let mut max_set = 0usize;
    for result in results {
        let (i, sigma, diag) = result?;
        let spins: serde_json::Map<String, serde_json::Value> = window
            .iter()
            .map(|v| {
                let spin = sigma.get(v).expect("window vertex assigned");
                (v.display(dim), json!(spin.value()))
            })
            .collect();
        n_stop_sum += diag.n_stop;
        max_set = max_set.max(diag.max_set_size);
        emit(json!({
            "schema": 1,
            "kind": "sample",
            "replica": i,
            "seed": args.seed,
            "stream": i,
            "spins": spins,
            "n_stop": diag.n_stop,
            "max_set_size": diag.max_set_size,
            "visited": diag.visited,
        }));
    }
    eprintln!(
        "sampled {} replica(s); mean events {:.2}, max chain size {}",
        args.replicas,
        n_stop_sum as f64 / args.replicas.max(1) as f64,
        max_set
    );
    Ok(EXIT_OK)
}

fn mu(args: MuArgs) -> anyhow::Result<i32> {
    let (model, policy) = args.model.load()?;
    let v = parse_vertex(&args.vertex, model.interaction.dimension())?;
    let dist = LambdaDistribution::for_policy(&model.interaction, v, &policy)?;
    let mu = dist.birth_death_mu(args.tolerance)?;
    emit(json!({
        "schema": 1,
        "kind": "mu",
        "vertex": v.display(model.interaction.dimension()),
        "policy": policy.name(),
        "mu": interval_json(mu),
        "width": mu.width(),
    }));
    eprintln!("mu in [{}, {}]", mu.lo, mu.hi);
    Ok(EXIT_OK)
}

fn descriptor_json(d: &SequenceDescriptor, dim: usize) -> serde_json::Value {
    json!(d
        .increments
        .iter()
        .map(|inc| inc.iter().map(|v| v.to_vec(dim)).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn optimization_json(kind: &str, result: &OptimizationResult, dim: usize) -> serde_json::Value {
    json!({
        "schema": 1,
        "kind": "optimize",
        "mode": kind,
        "best_mu": interval_json(result.best_mu),
        "candidates_evaluated": result.candidates_evaluated,
        "argmin": result
            .argmin_sequences
            .iter()
            .map(|d| descriptor_json(d, dim))
            .collect::<Vec<_>>(),
    })
}

fn optimize_seq(args: OptimizeArgs) -> anyhow::Result<i32> {
    let (model, policy) = args.model.load()?;
    let dim = model.interaction.dimension();
    let v = parse_vertex(&args.vertex, dim)?;
    let result = match args.mode.as_str() {
        "brute" => brute_force_min(v, &model.interaction, args.cap)?,
        "upsilon" => upsilon_refine(
            v,
            &policy,
            args.block,
            &model.interaction,
            args.cap,
            args.tolerance,
        )?,
        "ising" => {
            let mu = mu_ising_closed_form(v, &model.interaction, args.tolerance)?;
            let seq = gibbs_perfect::optimize::ising_optimal_sequence(v, &model.interaction)?;
            let shown = match model.interaction.n_v(&v) {
                Some(n) => n.min(16),
                None => 16,
            };
            let increments = (1..=shown)
                .map(|k| seq.increment_at(k))
                .collect::<gibbs_perfect::Result<Vec<_>>>()?;
            OptimizationResult {
                best_mu: mu,
                argmin_sequences: vec![SequenceDescriptor {
                    center: v,
                    increments,
                }],
                candidates_evaluated: 1,
            }
        }
        other => bail!("unknown mode '{other}' (expected ising, brute or upsilon)"),
    };
    emit(optimization_json(&args.mode, &result, dim));
    eprintln!(
        "best mu in [{}, {}] over {} candidate(s); {} argmin sequence(s)",
        result.best_mu.lo,
        result.best_mu.hi,
        result.candidates_evaluated,
        result.argmin_sequences.len()
    );
    Ok(EXIT_OK)
}

fn check(args: CheckArgs) -> anyhow::Result<i32> {
    let (model, policy) = args.model.load()?;
    let mut failed_required = false;
    let mut run_one = |cond: Condition| -> anyhow::Result<()> {
        let report = match cond {
            Condition::H1 => check_h1(&model.interaction, args.tolerance)?,
            Condition::H2 => check_h2(&model.interaction, &policy, args.tolerance)?,
        };
        emit(condition_json(&report));
        eprintln!(
            "{}: {} (witness [{}, {}], {})",
            report.condition.name(),
            if report.holds { "holds" } else { "fails" },
            report.witness.lo,
            report.witness.hi,
            report.vertex_class
        );
        if args.require.as_deref() == Some(report.condition.name()) && !report.holds {
            failed_required = true;
        }
        Ok(())
    };
    match args.cond.as_str() {
        "h1" => run_one(Condition::H1)?,
        "h2" => run_one(Condition::H2)?,
        "both" => {
            run_one(Condition::H1)?;
            run_one(Condition::H2)?;
        }
        other => bail!("unknown condition '{other}' (expected h1, h2 or both)"),
    }
    Ok(if failed_required {
        EXIT_REQUIRE
    } else {
        EXIT_OK
    })
}

fn extinct(args: ExtinctArgs) -> anyhow::Result<i32> {
    if let Some(gw) = &args.gw {
        return extinct_gw(&args, gw);
    }
    let spec = if let Some(path) = &args.spec {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        parse_spec(&text)?
    } else if let Some(path) = &args.model {
        let model = load_model(path)?;
        let policy = resolve_policy(&args.seq, &model)?;
        let window = parse_window(
            args.window.as_deref().expect("clap enforces --window"),
            model.interaction.dimension(),
        )?;
        ExtinctionSpec::from_interaction(model.interaction, policy, window)
    } else {
        bail!("one of --spec, --gw or --model is required");
    };

    if let Some(delta) = args.delta {
        let report = check_hypotheses(&spec, delta, args.tolerance)?;
        emit(json!({
            "schema": 1,
            "kind": "hypotheses",
            "delta": report.delta,
            "holds": report.holds,
            "far_field_eta": interval_json(report.far_field_eta),
            "exceptional_size": report.exceptional_size,
            "threshold_n": report.threshold_n,
            "xi": report.xi,
            "sensitivity": report
                .sensitivity
                .iter()
                .map(|s| json!({
                    "delta": s.delta,
                    "exceptional_size": s.exceptional_size,
                    "threshold_n": s.threshold_n,
                }))
                .collect::<Vec<_>>(),
        }));
    }

    let pool = thread_pool(args.threads)?;
    let spec = Arc::new(spec);
    let outcomes: Vec<gibbs_perfect::Result<_>> = pool.install(|| {
        (0..args.runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(args.seed, i);
                simulate(&spec, &mut rng, args.max_steps).map(|o| (i, o))
            })
            .collect()
    });

    let mut extinct_count = 0u64;
    let mut steps_sum = 0u64;
    for outcome in outcomes {
        let (i, outcome) = outcome?;
        let (is_extinct, steps) = match outcome {
            gibbs_perfect::extinction::Outcome::Extinct { steps } => (true, steps),
            gibbs_perfect::extinction::Outcome::Survived { steps } => (false, steps),
        };
        if is_extinct {
            extinct_count += 1;
            steps_sum += steps;
        }
        emit(json!({
            "schema": 1,
            "kind": "extinct_run",
            "run": i,
            "extinct": is_extinct,
            "steps": steps,
        }));
    }
    let fraction = extinct_count as f64 / args.runs.max(1) as f64;
    let mean_steps = if extinct_count > 0 {
        steps_sum as f64 / extinct_count as f64
    } else {
        f64::NAN
    };
    emit(json!({
        "schema": 1,
        "kind": "extinct_summary",
        "runs": args.runs,
        "extinct_fraction": fraction,
        "mean_steps_extinct": mean_steps,
    }));
    eprintln!(
        "{extinct_count}/{} runs extinct (fraction {fraction:.4}); mean steps among extinct {mean_steps:.2}",
        args.runs
    );
    Ok(EXIT_OK)
}

fn extinct_gw(args: &ExtinctArgs, gw: &str) -> anyhow::Result<i32> {
    let offspring = gw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .context("bad offspring pmf")?;
    let generations = args.max_steps.min(usize::MAX as u64) as usize;
    let mut extinct_count = 0u64;
    let mut gens_sum = 0u64;
    for i in 0..args.runs {
        let mut rng = replica_rng(args.seed, i);
        let run = galton_watson(&offspring, generations, args.initial, &mut rng)?;
        if let Some(g) = run.extinct_at {
            extinct_count += 1;
            gens_sum += g as u64;
        }
        emit(json!({
            "schema": 1,
            "kind": "gw_run",
            "run": i,
            "extinct": run.extinct_at.is_some(),
            "generations": run.extinct_at.unwrap_or(generations),
            "peak_population": run.trajectory.iter().max().copied().unwrap_or(0),
        }));
    }
    let fraction = extinct_count as f64 / args.runs.max(1) as f64;
    emit(json!({
        "schema": 1,
        "kind": "extinct_summary",
        "runs": args.runs,
        "extinct_fraction": fraction,
        "mean_steps_extinct": if extinct_count > 0 { gens_sum as f64 / extinct_count as f64 } else { f64::NAN },
    }));
    eprintln!(
        "{extinct_count}/{} Galton-Watson runs extinct (fraction {fraction:.4})",
        args.runs
    );
    Ok(EXIT_OK)
}

fn validate(args: ValidateArgs) -> anyhow::Result<i32> {
    let (model, policy) = args.model.load()?;
    let dim = model.interaction.dimension();
    let window = parse_window(&args.window, dim)?;
    let mut region = model
        .interaction
        .support_region()
        .ok_or_else(|| anyhow!("validate needs a finitely supported model (explicit edges)"))?;
    region.extend(window.iter().copied());
    let oracle = exact_gibbs_finite_support(&model.interaction, &region)?;

    let store = Arc::new(SequenceStore::new(model.interaction.clone(), policy));
    let oracle_region = oracle.region().to_vec();
    let pool = thread_pool(args.threads)?;
    let indices: Vec<gibbs_perfect::Result<usize>> = pool.install(|| {
        (0..args.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(args.seed, i);
                let (sigma, _) = perfect_sample(&oracle_region, &store, &mut rng, args.max_steps)?;
                oracle.pattern_index(&sigma)
            })
            .collect()
    });
    let mut counts = vec![0u64; oracle.cells()];
    for idx in indices {
        counts[idx?] += 1;
    }
    let report = compare_empirical(&counts, &oracle, args.alpha)?;
    let max_z = report
        .site_z
        .iter()
        .map(|(_, z)| z.abs())
        .fold(0.0f64, f64::max);
    emit(json!({
        "schema": 1,
        "kind": "validate",
        "samples": report.samples,
        "cells": report.cells,
        "pooled": report.pooled,
        "statistic": report.statistic,
        "dof": report.dof,
        "p_value": report.p_value,
        "alpha": report.alpha,
        "max_abs_site_z": max_z,
        "pass": report.pass,
    }));
    eprintln!(
        "chi-square {:.3} with {} dof: p = {:.4} ({}); max |site z| = {max_z:.2}",
        report.statistic,
        report.dof,
        report.p_value,
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(if report.pass {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    })
}
