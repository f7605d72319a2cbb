//! `plebo` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::benchmarks::{generate_suite, Suite, SuiteConfig};
use crate::gp::{FitOptions, DEFAULT_NOISE_VARIANCE};
use crate::prior::{run_mcmc, sample_candidates, summarize_eta, CandidateSet, McmcConfig, PosteriorSamples};
use crate::runner::{
    aggregate, aggregate_csv, difference_csv, difference_curve, prior_quality_report, PriorQualityReport, results_csv, run_many,
    run_seed, RunJob, RunResult,
};
use crate::seeding;
use crate::strategies::{
    build_transfer_pool, extract_initial_points, fit_shared, StrategyConfig, StrategyKind, DEFAULT_TRANSFER_CAP,
};

pub use plot::render_svg;

/// Minimum fraction of successful runs for `run` to exit 0.
pub const RUN_SUCCESS_FRACTION: f64 = 0.9;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "plebo", version, about = "Hyperparameter-prior transfer for Bayesian optimisation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hierarchical-GP task suite.
    GenSynthetic(GenArgs),
    /// Learn the hyperparameter prior from a suite's tuning tasks.
    FitPrior(FitArgs),
    /// Run optimisation strategies over a suite's test tasks.
    Run(RunArgs),
    /// Render an aggregate or difference CSV as SVG.
    Plot(PlotArgs),
    /// Rebuild the prior-quality report from a saved posterior.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for task CSVs and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "PLEBO_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub n_tuning: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    #[arg(long, default_value_t = 20)]
    pub tuning_evals: usize,
    #[arg(long, default_value_t = 10)]
    pub n_start: usize,
    #[arg(long, default_value_t = 32)]
    pub grid_side: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_VARIANCE)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct McmcArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub adapt_target: Option<f64>,
    #[arg(long)]
    pub proposal_scale: Option<f64>,
}

impl McmcArgs {
    fn config(&self, seed: u64, noise: f64) -> McmcConfig {
        let d = McmcConfig::default();
        McmcConfig {
            n_chains: self.chains.unwrap_or(d.n_chains),
            n_warmup: self.warmup.unwrap_or(d.n_warmup),
            n_samples_per_chain: self.samples.unwrap_or(d.n_samples_per_chain),
            adapt_target: self.adapt_target.unwrap_or(d.adapt_target),
            proposal_scale: self.proposal_scale.unwrap_or(d.proposal_scale),
            seed,
            noise_variance: noise,
            ..d
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Suite manifest JSON.
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "PLEBO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Number of hyperparameter candidates.
    #[arg(long = "h", default_value_t = 200)]
    pub h: usize,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

/// Everything `run` needs; loadable from JSON with `--manifest`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub suite: PathBuf,
    pub strategies: Vec<String>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub posterior: Option<PathBuf>,
    #[serde(default)]
    pub candidates: Option<PathBuf>,
    #[serde(default)]
    pub max_tasks: Option<usize>,
    #[serde(default)]
    pub mcmc: Option<McmcArgs>,
}

fn default_iterations() -> usize {
    30
}

fn default_h() -> usize {
    200
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run manifest; replaces the per-flag settings below.
    #[arg(long, conflicts_with_all = ["suite", "out", "strategies"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub suite: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub out: Option<PathBuf>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', default_value = "RandomSearch,EI,PLeBO")]
    pub strategies: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    #[arg(long, env = "PLEBO_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "h", default_value_t = 200)]
    pub h: usize,
    /// Independent repetitions per (task, strategy).
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Only run the first N test tasks.
    #[arg(long)]
    pub max_tasks: Option<usize>,
    /// Worker threads (defaults to available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Aggregate or difference CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub posterior: PathBuf,
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenSynthetic(a) => cmd_gen_synthetic(&a),
        Command::FitPrior(a) => cmd_fit_prior(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::failure(format!("writing {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::failure(format!("creating {}: {e}", path.display())))
}

fn load_suite(path: &Path) -> CliResult<Suite> {
    Suite::load(path).map_err(|e| CliError::usage(format!("loading suite {}: {e}", path.display())))
}

pub fn cmd_gen_synthetic(a: &GenArgs) -> CliResult<()> {
    let cfg = SuiteConfig {
        n_tuning: a.n_tuning,
        n_test: a.n_test,
        tuning_evals: a.tuning_evals,
        n_start: a.n_start,
        grid_side: a.grid_side,
        noise_variance: a.noise,
        seed: a.seed,
        ..SuiteConfig::default()
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let suite = generate_suite(&cfg).map_err(|e| CliError::failure(e.to_string()))?;
    let manifest = suite.write(&a.out).map_err(|e| CliError::failure(e.to_string()))?;
    println!(
        "generated {} tuning and {} test tasks ({}x{} grid, seed {}) -> {}",
        suite.tuning.len(),
        suite.test.len(),
        cfg.grid_side,
        cfg.grid_side,
        cfg.seed,
        manifest.display()
    );
    Ok(())
}

fn fit_prior(suite: &Suite, mcmc: &McmcConfig, h: usize) -> CliResult<(PosteriorSamples, CandidateSet)> {
    let datasets = suite.tuning_datasets();
    if datasets.is_empty() {
        return Err(CliError::usage("suite has no tuning tasks"));
    }
    let post = run_mcmc(&datasets, mcmc).map_err(|e| CliError::failure(format!("{e}")))?;
    let cands = sample_candidates(&post, h, seeding::derive_seed(mcmc.seed, &[0xcad]))
        .map_err(|e| CliError::failure(e.to_string()))?;
    Ok((post, cands))
}

fn write_report(suite: &Suite, post: &PosteriorSamples, out: &Path) -> CliResult<PriorQualityReport> {
    let datasets = suite.tuning_datasets();
    let true_thetas: Vec<_> = suite.tuning.iter().filter_map(|t| t.true_theta).collect();
    let truth = match (&suite.manifest.true_eta, true_thetas.len() == suite.tuning.len()) {
        (Some(eta), true) => Some((eta, true_thetas.as_slice())),
        _ => None,
    };
    let report = prior_quality_report(post, truth, &datasets).map_err(|e| CliError::failure(e.to_string()))?;
    let json = report.to_json().map_err(|e| CliError::failure(e.to_string()))?;
    write_file(&out.join("prior_report.json"), &json)?;
    write_file(&out.join("prior_tasks.csv"), &report.tasks_csv())?;
    write_file(&out.join("prior_density.csv"), &report.density_csv())?;
    Ok(report)
}

pub fn cmd_fit_prior(a: &FitArgs) -> CliResult<()> {
    if a.h == 0 {
        return Err(CliError::usage("--h must be at least 1"));
    }
    let suite = load_suite(&a.suite)?;
    let cfg = a.mcmc.config(a.seed, suite.noise_variance());
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    ensure_dir(&a.out)?;
    let (post, cands) = fit_prior(&suite, &cfg, a.h)?;
    write_file(&a.out.join("posterior.json"), &post.to_json().map_err(|e| CliError::failure(e.to_string()))?)?;
    write_file(&a.out.join("candidates.json"), &cands.to_json().map_err(|e| CliError::failure(e.to_string()))?)?;
    let report = write_report(&suite, &post, &a.out)?;
    println!(
        "fitted prior from {} tuning tasks: {} draws kept ({} filtered), mean lengthscale {:.4}, mean signal variance {:.4}, {} candidates",
        suite.tuning.len(),
        post.len(),
        post.n_filtered,
        report.lengthscale_mean_inferred,
        report.signal_variance_mean_inferred,
        cands.len()
    );
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> CliResult<()> {
    let suite = load_suite(&a.suite)?;
    let post = PosteriorSamples::from_json(&read_file(&a.posterior)?).map_err(|e| CliError::usage(e.to_string()))?;
    if post.n_tasks() != suite.tuning.len() {
        return Err(CliError::usage(format!(
            "posterior covers {} tasks but suite has {} tuning tasks",
            post.n_tasks(),
            suite.tuning.len()
        )));
    }
    ensure_dir(&a.out)?;
    write_report(&suite, &post, &a.out)?;
    println!("wrote prior-quality report to {}", a.out.display());
    Ok(())
}

fn manifest_from_args(a: &RunArgs) -> CliResult<RunManifest> {
    if let Some(path) = &a.manifest {
        return serde_json::from_str(&read_file(path)?)
            .map_err(|e| CliError::usage(format!("run manifest {}: {e}", path.display())));
    }
    Ok(RunManifest {
        suite: a.suite.clone().expect("required by clap"),
        strategies: a.strategies.clone(),
        iterations: a.iterations,
        seed: a.seed,
        out: a.out.clone().expect("required by clap"),
        h: a.h,
        replicates: a.replicates,
        posterior: a.posterior.clone(),
        candidates: a.candidates.clone(),
        max_tasks: a.max_tasks,
        mcmc: Some(a.mcmc.clone()),
    })
}

pub fn cmd_run(a: &RunArgs) -> CliResult<()> {
    let m = manifest_from_args(a)?;
    let kinds = m
        .strategies
        .iter()
        .map(|s| s.parse::<StrategyKind>().map_err(|e| CliError::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if kinds.is_empty() || m.iterations == 0 || m.replicates == 0 || m.h == 0 {
        return Err(CliError::usage("need at least one strategy, iteration, replicate and candidate"));
    }
    let suite = load_suite(&m.suite)?;
    let noise = suite.noise_variance();
    let tasks: Vec<_> = suite.test.iter().take(m.max_tasks.unwrap_or(usize::MAX)).collect();
    if tasks.is_empty() {
        return Err(CliError::usage("suite has no test tasks"));
    }
    let datasets = suite.tuning_datasets();
    let needs_transfer = kinds.iter().any(|k| {
        matches!(
            k,
            StrategyKind::Plebo | StrategyKind::Gamma | StrategyKind::Shared | StrategyKind::DirectTrans | StrategyKind::Initial
        )
    });
    if needs_transfer && datasets.is_empty() {
        return Err(CliError::usage("transfer strategies need tuning tasks in the suite"));
    }
    if kinds.contains(&StrategyKind::TruePlebo) && tasks.iter().any(|t| t.true_theta.is_none()) {
        return Err(CliError::usage("TruePLeBO needs true_theta for every test task"));
    }
    ensure_dir(&m.out)?;

    let fit = FitOptions::default().with_noise(noise);
    let mut base = StrategyConfig::new(StrategyKind::RandomSearch);
    base.fit = fit;

    // Prior artifacts: loaded from files or fitted here.
    let needs_prior = kinds.iter().any(|k| matches!(k, StrategyKind::Plebo | StrategyKind::Gamma));
    if needs_prior {
        let loaded_post = match &m.posterior {
            Some(p) => Some(PosteriorSamples::from_json(&read_file(p)?).map_err(|e| CliError::usage(e.to_string()))?),
            None => None,
        };
        let loaded_cands = match &m.candidates {
            Some(p) => Some(CandidateSet::from_json(&read_file(p)?).map_err(|e| CliError::usage(e.to_string()))?),
            None => None,
        };
        let (post, cands) = match (loaded_post, loaded_cands) {
            (Some(p), Some(c)) => (p, c),
            (p, c) => {
                let mcmc = m.mcmc.clone().unwrap_or(McmcArgs {
                    chains: None,
                    warmup: None,
                    samples: None,
                    adapt_target: None,
                    proposal_scale: None,
                });
                let cfg = mcmc.config(m.seed, noise);
                cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
                let post = match p {
                    Some(p) => p,
                    None => run_mcmc(&datasets, &cfg).map_err(|e| CliError::failure(e.to_string()))?,
                };
                let cands = match c {
                    Some(c) => c,
                    None => sample_candidates(&post, m.h, seeding::derive_seed(m.seed, &[0xcad]))
                        .map_err(|e| CliError::failure(e.to_string()))?,
                };
                (post, cands)
            }
        };
        base.eta_mean = Some(summarize_eta(&post).map_err(|e| CliError::failure(e.to_string()))?);
        base.candidates = Some(cands);
    }
    if kinds.contains(&StrategyKind::Shared) {
        let mut rng = seeding::stream(m.seed, &[0x5a]);
        base.shared_theta = Some(fit_shared(&datasets, &fit, &mut rng).map_err(|e| CliError::failure(e.to_string()))?);
    }
    if kinds.contains(&StrategyKind::DirectTrans) {
        let mut rng = seeding::stream(m.seed, &[0xd1]);
        base.transfer_pool = Some(
            build_transfer_pool(&datasets, DEFAULT_TRANSFER_CAP, &mut rng).map_err(|e| CliError::failure(e.to_string()))?,
        );
    }
    if kinds.contains(&StrategyKind::Initial) {
        base.initial_points = Some(extract_initial_points(&datasets));
    }

    let mut jobs = Vec::new();
    for &kind in &kinds {
        for (ti, task) in tasks.iter().enumerate() {
            for rep in 0..m.replicates {
                let mut cfg = base.clone();
                cfg.kind = kind;
                cfg.true_theta = task.true_theta;
                jobs.push(RunJob {
                    task,
                    config: cfg,
                    iterations: m.iterations,
                    seed: run_seed(m.seed, ti, kind, rep),
                    replicate: rep,
                });
            }
        }
    }
    let threads = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcomes = run_many(&jobs, threads);
    let mut results: Vec<RunResult> = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                if let Some(f) = &r.failure {
                    failures.push(format!("{} {}: {f}", job.task.name, job.config.kind));
                }
                results.push(r);
            }
            Err(e) => failures.push(format!("{} {}: {e}", job.task.name, job.config.kind)),
        }
    }
    write_file(&m.out.join("results.csv"), &results_csv(&results))?;

    let by_kind = |kind: StrategyKind| -> Vec<RunResult> {
        results.iter().filter(|r| r.strategy == kind.name()).cloned().collect()
    };
    let curves: Vec<_> = kinds.iter().filter_map(|&k| aggregate(&by_kind(k)).ok()).collect();
    write_file(&m.out.join("aggregate.csv"), &aggregate_csv(&curves))?;
    if kinds.contains(&StrategyKind::Plebo) {
        let reference = by_kind(StrategyKind::Plebo);
        let diffs: Vec<_> = kinds
            .iter()
            .filter(|&&k| k != StrategyKind::Plebo)
            .filter_map(|&k| match difference_curve(&by_kind(k), &reference) {
                Ok(c) => Some(c),
                Err(e) => {
                    eprintln!("warning: no difference curve for {k}: {e}");
                    None
                }
            })
            .collect();
        write_file(&m.out.join("differences.csv"), &difference_csv(&diffs))?;
    }
    if !failures.is_empty() {
        write_file(&m.out.join("failures.txt"), &(failures.join("\n") + "\n"))?;
        for f in &failures {
            eprintln!("run failed: {f}");
        }
    }
    let ok = jobs.len() - failures.len();
    println!(
        "completed {ok}/{} runs ({} strategies x {} tasks x {} replicates, {} iterations) -> {}",
        jobs.len(),
        kinds.len(),
        tasks.len(),
        m.replicates,
        m.iterations,
        m.out.display()
    );
    if (ok as f64) < RUN_SUCCESS_FRACTION * jobs.len() as f64 {
        return Err(CliError::failure(format!("only {ok} of {} runs succeeded", jobs.len())));
    }
    Ok(())
}

pub fn cmd_plot(a: &PlotArgs) -> CliResult<()> {
    let text = read_file(&a.input)?;
    let svg = render_svg(&text, a.title.as_deref()).map_err(CliError::usage)?;
    write_file(&a.out, &svg)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
