//! BO loop execution, the normalised-best metric and curve aggregation.

mod report;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::benchmarks::GridTask;
use crate::seeding;
use crate::strategies::{propose_next, StrategyConfig, StrategyKind, StrategyState};

pub use report::{prior_quality_report, DensityCurve, PriorQualityReport, TaskQuality};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunnerError {
    #[error("metric undefined: task maximum {0} is not positive")]
    MetricUndefined(f64),
    #[error("empty observation list")]
    NoObservations,
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error("trace lengths differ: {0}")]
    LengthMismatch(String),
    #[error("task sets differ: {0}")]
    TaskSetMismatch(String),
    #[error("no successful runs to aggregate")]
    NothingToAggregate,
}

/// `max(Y) / y_max`.
pub fn normalized_best(observed: &[f64], y_max: f64) -> Result<f64, RunnerError> {
    if !(y_max > 0.0) {
        return Err(RunnerError::MetricUndefined(y_max));
    }
    let best = observed
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(RunnerError::NoObservations)?;
    Ok(best / y_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based optimisation step.
    pub iteration: usize,
    pub chosen_index: usize,
    pub observed_y: f64,
    pub r: f64,
    pub regret: f64,
    pub step_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub task_name: String,
    pub strategy: String,
    pub seed: u64,
    pub replicate: usize,
    pub n_start: usize,
    /// Metric over the start points alone, when there are any.
    pub initial_r: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub failure: Option<String>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn r_trace(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.r).collect()
    }

    /// The same result with every timing field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        out.iterations.iter_mut().for_each(|it| it.step_seconds = 0.0);
        out
    }
}

/// Seed of one `(task, strategy, replicate)` run.
pub fn run_seed(root: u64, task_index: usize, strategy: StrategyKind, replicate: usize) -> u64 {
    seeding::derive_seed(
        root,
        &[task_index as u64, seeding::label_id(strategy.name()), replicate as u64],
    )
}

/// Runs `iterations` BO steps on `task`, starting from its start indices.
pub fn run_bo(task: &GridTask, cfg: &StrategyConfig, iterations: usize, seed: u64) -> Result<RunResult, RunnerError> {
    run_bo_replicate(task, cfg, iterations, seed, 0)
}

pub fn run_bo_replicate(
    task: &GridTask,
    cfg: &StrategyConfig,
    iterations: usize,
    seed: u64,
    replicate: usize,
) -> Result<RunResult, RunnerError> {
    if iterations == 0 {
        return Err(RunnerError::InvalidRun("iterations must be at least 1".into()));
    }
    let y_max = task.y_max();
    if !(y_max > 0.0) {
        return Err(RunnerError::MetricUndefined(y_max));
    }
    let starts = task.start_indices();
    if task.len() < starts.len() + iterations {
        return Err(RunnerError::InvalidRun(format!(
            "task '{}' has {} cells, cannot run {} iterations after {} starts",
            task.name,
            task.len(),
            iterations,
            starts.len()
        )));
    }
    let mut rng = seeding::stream(seed, &[]);
    let mut state = StrategyState::new(task.len());
    for &i in starts {
        state
            .observe(i, task.value(i))
            .map_err(|e| RunnerError::InvalidRun(e.to_string()))?;
    }
    let mut result = RunResult {
        task_name: task.name.clone(),
        strategy: cfg.kind.name().to_string(),
        seed,
        replicate,
        n_start: starts.len(),
        initial_r: normalized_best(state.values(), y_max).ok(),
        iterations: Vec::with_capacity(iterations),
        failure: None,
    };
    let mut best = state.best_value().unwrap_or(f64::NEG_INFINITY);
    for it in 1..=iterations {
        let t0 = Instant::now();
        let idx = match propose_next(cfg, &mut state, task.grid(), &mut rng) {
            Ok(i) => i,
            Err(e) => {
                result.failure = Some(format!("iteration {it}: {e}"));
                break;
            }
        };
        let y = task.value(idx);
        if let Err(e) = state.observe(idx, y) {
            result.failure = Some(format!("iteration {it}: {e}"));
            break;
        }
        let step_seconds = t0.elapsed().as_secs_f64();
        best = best.max(y);
        result.iterations.push(IterationRecord {
            iteration: it,
            chosen_index: idx,
            observed_y: y,
            r: best / y_max,
            regret: y_max - best,
            step_seconds,
        });
    }
    Ok(result)
}

/// One scheduled run.
#[derive(Debug, Clone)]
pub struct RunJob<'a> {
    pub task: &'a GridTask,
    pub config: StrategyConfig,
    pub iterations: usize,
    pub seed: u64,
    pub replicate: usize,
}

/// Executes jobs on a pool of `threads` workers; output order matches `jobs`.
pub fn run_many(jobs: &[RunJob<'_>], threads: usize) -> Vec<Result<RunResult, RunnerError>> {
    let exec = || {
        jobs.par_iter()
            .map(|j| run_bo_replicate(j.task, &j.config, j.iterations, j.seed, j.replicate))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(exec),
        Err(_) => exec(),
    }
}

/// Per-iteration mean and standard error over `j` traces.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub strategy: String,
    pub reference: Option<String>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub j: usize,
}

fn mean_stderr(traces: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let j = traces.len() as f64;
    let len = traces[0].len();
    let mut mean = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for t in 0..len {
        let m = traces.iter().map(|tr| tr[t]).sum::<f64>() / j;
        mean[t] = m;
        if traces.len() > 1 {
            let var = traces.iter().map(|tr| (tr[t] - m).powi(2)).sum::<f64>() / (j - 1.0);
            stderr[t] = (var / j).sqrt();
        }
    }
    (mean, stderr)
}

/// Mean ± standard error of `r` per iteration; failed runs are excluded.
pub fn aggregate(results: &[RunResult]) -> Result<AggregateCurve, RunnerError> {
    let ok: Vec<&RunResult> = results.iter().filter(|r| !r.failed()).collect();
    let first = ok.first().ok_or(RunnerError::NothingToAggregate)?;
    let len = first.iterations.len();
    if let Some(bad) = ok.iter().find(|r| r.iterations.len() != len) {
        return Err(RunnerError::LengthMismatch(format!(
            "{} has {} iterations, expected {len}",
            bad.task_name,
            bad.iterations.len()
        )));
    }
    let traces: Vec<Vec<f64>> = ok.iter().map(|r| r.r_trace()).collect();
    let (mean, stderr) = mean_stderr(&traces);
    Ok(AggregateCurve {
        strategy: first.strategy.clone(),
        reference: None,
        mean,
        stderr,
        j: traces.len(),
    })
}

/// Paired per-task differences `r(method) - r(reference)`, then mean ± standard error.
/// Both sides must cover the same `(task, replicate)` runs; pairs where either run
/// failed are dropped.
pub fn difference_curve(method: &[RunResult], reference: &[RunResult]) -> Result<AggregateCurve, RunnerError> {
    let key = |r: &RunResult| (r.task_name.clone(), r.replicate);
    let refs: BTreeMap<_, &RunResult> = reference.iter().map(|r| (key(r), r)).collect();
    let mine: BTreeMap<_, &RunResult> = method.iter().map(|r| (key(r), r)).collect();
    if refs.keys().ne(mine.keys()) {
        return Err(RunnerError::TaskSetMismatch(format!(
            "{} method runs vs {} reference runs",
            mine.len(),
            refs.len()
        )));
    }
    let mut diffs = Vec::with_capacity(mine.len());
    for (k, m) in &mine {
        let r = refs[k];
        if m.failed() || r.failed() {
            continue;
        }
        if m.iterations.len() != r.iterations.len() {
            return Err(RunnerError::LengthMismatch(format!("task {}", k.0)));
        }
        diffs.push(
            m.iterations
                .iter()
                .zip(&r.iterations)
                .map(|(a, b)| a.r - b.r)
                .collect::<Vec<f64>>(),
        );
    }
    if diffs.is_empty() {
        return Err(RunnerError::NothingToAggregate);
    }
    let len = diffs[0].len();
    if diffs.iter().any(|d| d.len() != len) {
        return Err(RunnerError::LengthMismatch("traces of different lengths".into()));
    }
    let (mean, stderr) = mean_stderr(&diffs);
    Ok(AggregateCurve {
        strategy: method.first().map(|r| r.strategy.clone()).unwrap_or_default(),
        reference: reference.first().map(|r| r.strategy.clone()),
        mean,
        stderr,
        j: diffs.len(),
    })
}

pub const RESULTS_HEADER: &str = "task,strategy,seed,iteration,chosen_index,observed_y,r,regret,step_seconds";
pub const AGGREGATE_HEADER: &str = "strategy,iteration,mean,stderr,J";
pub const DIFFERENCE_HEADER: &str = "strategy,reference,iteration,mean,stderr,J";

/// Raw per-iteration rows. Failed runs contribute the iterations they completed.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        for it in &r.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.task_name, r.strategy, r.seed, it.iteration, it.chosen_index, it.observed_y, it.r, it.regret, it.step_seconds
            );
        }
    }
    out
}

pub fn aggregate_csv(curves: &[AggregateCurve]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for c in curves {
        for (t, (m, s)) in c.mean.iter().zip(&c.stderr).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", c.strategy, t + 1, m, s, c.j);
        }
    }
    out
}

pub fn difference_csv(curves: &[AggregateCurve]) -> String {
    let mut out = String::from(DIFFERENCE_HEADER);
    out.push('\n');
    for c in curves {
        let reference = c.reference.as_deref().unwrap_or("");
        for (t, (m, s)) in c.mean.iter().zip(&c.stderr).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{}", c.strategy, reference, t + 1, m, s, c.j);
        }
    }
    out
}

#[cfg(test)]
mod tests;
