//! Command-line front end: `learn`, `run`, `synth` and `validate`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learning::{mean_lengths, KnowledgeBase};
use crate::model::{ClusterConfig, Job, ScalingProfile};
use crate::sim::{compare, horizon, run_learning, CompareSettings, Forecaster, PolicyKind, SimOutcome};
use crate::traces::{
    builtin_profiles, estimate_utilization, load_carbon_trace, load_jobs, load_profiles, rate_for_utilization,
    sinusoidal_trace, synthesize_jobs, write_carbon_trace, write_jobs, write_jobs_to, LengthDist, ProfileSet,
    SynthSpec,
};

#[derive(Debug, Parser)]
#[command(name = "carbonflex", version, about = "Carbon-aware cluster provisioning and scheduling simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay the oracle over historical jobs and write a knowledge base.
    Learn(LearnArgs),
    /// Compare policies on an evaluation job trace.
    Run(RunArgs),
    /// Generate a synthetic job trace (and optionally a carbon trace).
    Synth(SynthArgs),
    /// Check configuration and input files without running anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Profile CSV; overrides the configured one.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Cluster capacity M; overrides the configured one.
    #[arg(long)]
    pub capacity: Option<u32>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long)]
    pub carbon: PathBuf,
    /// Historical job trace.
    #[arg(long)]
    pub jobs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated replay start offsets in slots.
    #[arg(long, value_delimiter = ',')]
    pub replay_offsets: Option<Vec<usize>>,
    #[arg(long)]
    pub window_slots: Option<usize>,
    #[arg(long)]
    pub window_days: Option<u32>,
    /// Deadline-extension rounds for infeasible replays.
    #[arg(long)]
    pub max_rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long)]
    pub carbon: PathBuf,
    /// Evaluation job trace.
    #[arg(long)]
    pub jobs: PathBuf,
    /// Knowledge base written by `learn`.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Comma-separated policies; defaults to every baseline, the oracle and,
    /// given `--kb`, carbonflex.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    pub policies: Option<Vec<PolicyKind>>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forecast noise (relative standard deviation).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Historical job trace used for per-queue mean lengths when the
    /// knowledge base does not provide them.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    /// Mean arrivals per slot.
    #[arg(long, conflicts_with = "target_utilization", required_unless_present = "target_utilization")]
    pub rate: Option<f64>,
    /// Offered load to aim for; needs a capacity.
    #[arg(long)]
    pub target_utilization: Option<f64>,
    #[arg(long, default_value_t = 168)]
    pub slots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// fixed:L, uniform:MIN:MAX, exponential:MEAN or lognormal:MEDIAN:SIGMA.
    #[arg(long, default_value = "exponential:4", value_parser = parse_lengths)]
    pub lengths: LengthDist,
    #[arg(long)]
    pub max_length: Option<f64>,
    /// Job CSV destination; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a sinusoidal carbon trace covering the jobs plus a day.
    #[arg(long)]
    pub carbon_out: Option<PathBuf>,
    #[arg(long, default_value_t = 300.0)]
    pub ci_mean: f64,
    #[arg(long, default_value_t = 0.3)]
    pub ci_cov: f64,
    #[arg(long, default_value_t = 0.0)]
    pub ci_noise: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long)]
    pub carbon: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<PathBuf>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse()
}

fn parse_lengths(s: &str) -> std::result::Result<LengthDist, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Learn(args) => learn(args),
        Command::Run(args) => run(args),
        Command::Synth(args) => synth(args),
        Command::Validate(args) => validate(args),
    }
}

/// Configuration with flag overrides applied, plus its profiles.
fn resolve(args: &ClusterArgs) -> Result<(ExperimentConfig, ProfileSet)> {
    let mut config = match (&args.config, args.capacity) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(m)) => ExperimentConfig::new(ClusterConfig::with_capacity(m)),
        (None, None) => return Err(Error::Config("either --config or --capacity is required".into())),
    };
    if let Some(m) = args.capacity {
        config.cluster.max_capacity = m;
    }
    if let Some(p) = &args.profiles {
        config.profiles = Some(p.clone());
    }
    config.validate()?;
    let profiles = config.profile_set()?;
    Ok((config, profiles))
}

fn learn(args: LearnArgs) -> Result<()> {
    let (mut config, profiles) = resolve(&args.cluster)?;
    if let Some(offsets) = args.replay_offsets {
        config.learning.replay_offsets = offsets;
    }
    if let Some(w) = args.window_slots {
        config.learning.window_slots = w;
    }
    if let Some(d) = args.window_days {
        config.learning.window_days = d;
    }
    if let Some(r) = args.max_rounds {
        config.learning.max_extension_rounds = r;
    }
    config.validate()?;
    let trace = load_carbon_trace(&args.carbon)?;
    let jobs = load_jobs(&args.jobs, &config.cluster, &profiles)?;
    let (kb, summary) = run_learning(&jobs, &trace, &config.cluster, &config.learning)?;
    kb.save(&args.out)?;
    println!("cases: {}", summary.cases);
    println!("replays: {} ({} feasible)", summary.replays, summary.feasible_replays);
    println!("deadline extensions: {} slots", summary.extensions);
    println!("knowledge base: {}", args.out.display());
    Ok(())
}

/// Everything needed to reproduce a run, embedded in `outcome.json`.
#[derive(Serialize)]
struct RunRecord<'a> {
    experiment: &'a ExperimentConfig,
    carbon: &'a Path,
    jobs: &'a Path,
    kb: Option<&'a Path>,
    history: Option<&'a Path>,
    policies: Vec<&'static str>,
}

fn run(args: RunArgs) -> Result<()> {
    let (mut config, profiles) = resolve(&args.cluster)?;
    if let Some(seed) = args.seed {
        config.simulation.seed = seed;
    }
    if let Some(noise) = args.noise {
        config.simulation.forecast_noise_sigma = noise;
    }
    config.validate()?;
    let policies = match args.policies.clone() {
        Some(p) => p,
        None => PolicyKind::ALL
            .into_iter()
            .filter(|&p| p != PolicyKind::CarbonFlex || args.kb.is_some())
            .collect(),
    };
    if policies.contains(&PolicyKind::CarbonFlex) && args.kb.is_none() {
        return Err(Error::Config("policy carbonflex needs a knowledge base (--kb)".into()));
    }
    let trace = load_carbon_trace(&args.carbon)?;
    let jobs = load_jobs(&args.jobs, &config.cluster, &profiles)?;
    let kb = args.kb.as_deref().map(KnowledgeBase::load).transpose()?;
    let num_queues = config.cluster.queues.len();
    let lengths = match (&kb, &args.history) {
        (_, Some(path)) => mean_lengths(&load_jobs(path, &config.cluster, &profiles)?, num_queues),
        (Some(kb), None) if kb.mean_lengths.len() == num_queues => kb.mean_lengths.clone(),
        _ => mean_lengths(&jobs, num_queues),
    };
    let settings = CompareSettings {
        params: config.provisioning.clone(),
        forecaster: Forecaster {
            noise_sigma: config.simulation.forecast_noise_sigma,
            seed: config.simulation.seed,
        },
        mean_lengths: lengths,
        max_extension_rounds: config.learning.max_extension_rounds,
        seed: config.simulation.seed,
    };
    let mut outcome = compare(&jobs, &trace, &config.cluster, kb.as_ref(), &policies, &settings)?;
    let mut listed: Vec<PolicyKind> = policies.clone();
    listed.sort();
    listed.dedup();
    let record = RunRecord {
        experiment: &config,
        carbon: &args.carbon,
        jobs: &args.jobs,
        kb: args.kb.as_deref(),
        history: args.history.as_deref(),
        policies: listed.iter().map(|p| p.as_str()).collect(),
    };
    outcome.config = serde_json::to_value(&record).map_err(|e| Error::invalid("config", e.to_string()))?;
    outcome.write_to_dir(&args.out_dir)?;
    print_table(&outcome);
    Ok(())
}

fn print_table(outcome: &SimOutcome) {
    println!(
        "{:<16} {:>14} {:>10} {:>12} {:>10}",
        "policy", "carbon_g", "savings_%", "mean_wait_h", "violations"
    );
    for r in &outcome.policies {
        println!(
            "{:<16} {:>14.2} {:>10.2} {:>12.2} {:>10.3}",
            r.policy, r.total_carbon_g, r.savings_pct, r.mean_wait_hours, r.violation_rate
        );
        for flag in &r.flags {
            println!("  note: {flag}");
        }
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let (cluster, profiles) = match (&args.cluster.config, args.cluster.capacity) {
        (None, None) => {
            let profiles = match &args.cluster.profiles {
                Some(p) => load_profiles(p)?,
                None => builtin_profiles(),
            };
            (None, profiles)
        }
        _ => {
            let (config, profiles) = resolve(&args.cluster)?;
            (Some(config.cluster), profiles)
        }
    };
    let routing = cluster.clone().unwrap_or_else(|| ClusterConfig::with_capacity(1));
    let profile_list: Vec<Arc<ScalingProfile>> = profiles.values().cloned().collect();
    let rate = match (args.rate, args.target_utilization) {
        (Some(r), _) => r,
        (None, Some(target)) => {
            let Some(c) = &cluster else {
                return Err(Error::Config("--target-utilization needs --capacity or --config".into()));
            };
            rate_for_utilization(target, c.max_capacity, &args.lengths, args.max_length, &profile_list, args.seed)?
        }
        (None, None) => return Err(Error::Config("one of --rate or --target-utilization is required".into())),
    };
    let spec = SynthSpec {
        rate,
        slots: args.slots,
        lengths: args.lengths.clone(),
        max_length: args.max_length,
        profiles: profile_list,
        seed: args.seed,
    };
    let jobs = synthesize_jobs(&spec, &routing)?;
    match &args.out {
        Some(path) => write_jobs(&jobs, path)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_jobs_to(&jobs, &mut lock).map_err(|e| Error::io("<stdout>", e))?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    if let Some(path) = &args.carbon_out {
        let trace = sinusoidal_trace(
            args.slots + 2 * routing.slots_per_day(),
            args.ci_mean,
            args.ci_cov,
            routing.slots_per_day(),
            0.0,
            args.ci_noise,
            args.seed,
        )?;
        write_carbon_trace(&trace, path)?;
    }
    report_load(&jobs, cluster.as_ref(), args.slots, rate);
    Ok(())
}

fn report_load(jobs: &[Job], cluster: Option<&ClusterConfig>, slots: usize, rate: f64) {
    let demand: f64 = jobs.iter().map(|j| j.length * j.profile.k_min() as f64).sum();
    eprintln!("jobs: {} (rate {rate:.4} per slot over {slots} slots)", jobs.len());
    match cluster {
        Some(c) => eprintln!(
            "estimated utilization: {:.4} (capacity {})",
            estimate_utilization(jobs, c.max_capacity, slots),
            c.max_capacity
        ),
        None => eprintln!("offered load: {demand} server-slots"),
    }
}

fn validate(args: ValidateArgs) -> Result<()> {
    let (config, profiles) = resolve(&args.cluster)?;
    println!(
        "config ok: capacity {}, {} queues, {} profiles",
        config.cluster.max_capacity,
        config.cluster.queues.len(),
        profiles.len()
    );
    if let Some(path) = &args.carbon {
        let trace = load_carbon_trace(path)?;
        println!("carbon trace ok: {} samples, {} simulated slots", trace.len(), horizon(&trace));
    }
    if let Some(path) = &args.jobs {
        let jobs = load_jobs(path, &config.cluster, &profiles)?;
        println!("jobs ok: {}", jobs.len());
    }
    if let Some(path) = &args.kb {
        let kb = KnowledgeBase::load(path)?;
        println!("knowledge base ok: {} cases", kb.len());
    }
    Ok(())
}
