//! Optimisation strategies behind a single propose-next interface.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    base_acquisition, plebo_acquisition, AcquisitionError, AcquisitionSpec, DEFAULT_UCB_BETA,
};
use crate::gp::{fit_hyperparams, fit_map, Dataset, FitOptions, GpError, HyperParams, PointSet};
use crate::prior::{CandidateSet, HyperPrior};

/// Acquisition values within this distance of the maximum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Maximum number of past evaluations in the direct-transfer pool.
pub const DEFAULT_TRANSFER_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("no unobserved grid points remain")]
    NoUnobservedPoints,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    RandomSearch,
    Ei,
    Ucb,
    DirectTrans,
    Initial,
    Plebo,
    TruePlebo,
    Gamma,
    Shared,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::RandomSearch,
        StrategyKind::Ei,
        StrategyKind::Ucb,
        StrategyKind::DirectTrans,
        StrategyKind::Initial,
        StrategyKind::Plebo,
        StrategyKind::TruePlebo,
        StrategyKind::Gamma,
        StrategyKind::Shared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::RandomSearch => "RandomSearch",
            StrategyKind::Ei => "EI",
            StrategyKind::Ucb => "UCB",
            StrategyKind::DirectTrans => "DirectTrans",
            StrategyKind::Initial => "Initial",
            StrategyKind::Plebo => "PLeBO",
            StrategyKind::TruePlebo => "TruePLeBO",
            StrategyKind::Gamma => "Gamma",
            StrategyKind::Shared => "Shared",
        }
    }

    /// Whether the strategy refits hyperparameters during optimisation.
    pub fn refits(self) -> bool {
        matches!(
            self,
            StrategyKind::Ei | StrategyKind::Ucb | StrategyKind::Gamma | StrategyKind::DirectTrans | StrategyKind::Initial
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StrategyError::Config(format!("unknown strategy '{s}'")))
    }
}

/// Immutable per-run strategy configuration. Only the optional field matching `kind`
/// is consulted.
#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub candidates: Option<CandidateSet>,
    pub eta_mean: Option<HyperPrior>,
    pub shared_theta: Option<HyperParams<f64>>,
    pub true_theta: Option<HyperParams<f64>>,
    pub transfer_pool: Option<Dataset<f64>>,
    pub initial_points: Option<Vec<Vec<f64>>>,
    pub refit_every: usize,
    pub fit: FitOptions<f64>,
    pub ucb_beta: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            candidates: None,
            eta_mean: None,
            shared_theta: None,
            true_theta: None,
            transfer_pool: None,
            initial_points: None,
            refit_every: 1,
            fit: FitOptions::default(),
            ucb_beta: DEFAULT_UCB_BETA,
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        let missing = |field: &str| {
            Err(StrategyError::Config(format!(
                "strategy {} requires `{field}`",
                self.kind
            )))
        };
        match self.kind {
            StrategyKind::Plebo if self.candidates.as_ref().is_none_or(|c| c.is_empty()) => missing("candidates"),
            StrategyKind::Gamma if self.eta_mean.is_none() => missing("eta_mean"),
            StrategyKind::Shared if self.shared_theta.is_none() => missing("shared_theta"),
            StrategyKind::TruePlebo if self.true_theta.is_none() => missing("true_theta"),
            StrategyKind::DirectTrans if self.transfer_pool.is_none() => missing("transfer_pool"),
            StrategyKind::Initial if self.initial_points.is_none() => missing("initial_points"),
            _ if self.refit_every == 0 => Err(StrategyError::Config("refit_every must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Run-local observations and caches for one task.
#[derive(Debug, Clone)]
pub struct StrategyState {
    observed: Vec<usize>,
    values: Vec<f64>,
    is_observed: Vec<bool>,
    iteration: usize,
    cached_theta: Option<HyperParams<f64>>,
    last_fit: Option<usize>,
    initial_consumed: usize,
    fit_count: usize,
}

impl StrategyState {
    pub fn new(grid_len: usize) -> Self {
        Self {
            observed: Vec::new(),
            values: Vec::new(),
            is_observed: vec![false; grid_len],
            iteration: 0,
            cached_theta: None,
            last_fit: None,
            initial_consumed: 0,
            fit_count: 0,
        }
    }

    /// Records an observation; repeated indices are rejected.
    pub fn observe(&mut self, index: usize, value: f64) -> Result<(), StrategyError> {
        match self.is_observed.get_mut(index) {
            Some(flag) if !*flag => {
                *flag = true;
                self.observed.push(index);
                self.values.push(value);
                Ok(())
            }
            _ => Err(StrategyError::Config(format!(
                "index {index} already observed or out of range"
            ))),
        }
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_observed(&self, index: usize) -> bool {
        self.is_observed[index]
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Number of hyperparameter fits performed so far.
    pub fn fit_count(&self) -> usize {
        self.fit_count
    }

    pub fn cached_theta(&self) -> Option<&HyperParams<f64>> {
        self.cached_theta.as_ref()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    pub fn unobserved(&self) -> Vec<usize> {
        (0..self.is_observed.len()).filter(|&i| !self.is_observed[i]).collect()
    }

    pub fn dataset(&self, grid: &PointSet<f64>) -> Dataset<f64> {
        Dataset::new(grid.select(&self.observed), self.values.clone()).expect("aligned by construction")
    }
}

/// Picks the best unobserved grid index for the configured strategy.
pub fn propose_next<R: Rng + ?Sized>(
    cfg: &StrategyConfig,
    state: &mut StrategyState,
    grid: &PointSet<f64>,
    rng: &mut R,
) -> Result<usize, StrategyError> {
    cfg.validate()?;
    if state.is_observed.len() != grid.len() {
        return Err(StrategyError::Config(format!(
            "state covers {} points but grid has {}",
            state.is_observed.len(),
            grid.len()
        )));
    }
    let unobserved = state.unobserved();
    if unobserved.is_empty() {
        return Err(StrategyError::NoUnobservedPoints);
    }
    let choice = match cfg.kind {
        StrategyKind::RandomSearch => unobserved[rng.random_range(0..unobserved.len())],
        StrategyKind::Initial if state.initial_consumed < cfg.initial_points.as_ref().map_or(0, Vec::len) => {
            let target = &cfg.initial_points.as_ref().unwrap()[state.initial_consumed];
            state.initial_consumed += 1;
            nearest(grid, &unobserved, target)
        }
        kind => {
            let data = state.dataset(grid);
            let queries = grid.select(&unobserved);
            let best = state.best_value().unwrap_or(0.0);
            let ei = AcquisitionSpec::ei();
            let acq = match kind {
                StrategyKind::Ei | StrategyKind::Initial => {
                    let theta = refit(cfg, state, &data, None, grid, rng)?;
                    base_acquisition(&theta, &data, &queries, &ei, best)?
                }
                StrategyKind::Ucb => {
                    let theta = refit(cfg, state, &data, None, grid, rng)?;
                    base_acquisition(&theta, &data, &queries, &AcquisitionSpec::ucb(cfg.ucb_beta), best)?
                }
                StrategyKind::Gamma => {
                    let theta = refit(cfg, state, &data, cfg.eta_mean.as_ref(), grid, rng)?;
                    base_acquisition(&theta, &data, &queries, &ei, best)?
                }
                StrategyKind::Shared => {
                    base_acquisition(cfg.shared_theta.as_ref().unwrap(), &data, &queries, &ei, best)?
                }
                StrategyKind::TruePlebo => {
                    base_acquisition(cfg.true_theta.as_ref().unwrap(), &data, &queries, &ei, best)?
                }
                StrategyKind::Plebo => {
                    let cands = &cfg.candidates.as_ref().unwrap().thetas;
                    plebo_acquisition(cands, &data, &queries, &ei, best)?
                }
                StrategyKind::DirectTrans => {
                    let pool = cfg.transfer_pool.as_ref().unwrap();
                    let union = Dataset::union(grid.dim(), [pool, &data])?;
                    let theta = refit(cfg, state, &union, None, grid, rng)?;
                    let incumbent = state
                        .best_value()
                        .or_else(|| pool.max_target())
                        .unwrap_or(0.0);
                    base_acquisition(&theta, &union, &queries, &ei, incumbent)?
                }
                StrategyKind::RandomSearch => unreachable!(),
            };
            unobserved[argmax_with_ties(&acq, rng)]
        }
    };
    state.iteration += 1;
    Ok(choice)
}

fn default_theta(grid: &PointSet<f64>, noise: f64) -> HyperParams<f64> {
    let diameter = grid.distance_range().map_or(1.0, |(_, hi)| hi);
    HyperParams {
        lengthscale: 0.1 * diameter,
        signal_variance: 1.0,
        noise_variance: noise,
    }
}

fn refit<R: Rng + ?Sized>(
    cfg: &StrategyConfig,
    state: &mut StrategyState,
    data: &Dataset<f64>,
    prior: Option<&HyperPrior>,
    grid: &PointSet<f64>,
    rng: &mut R,
) -> Result<HyperParams<f64>, StrategyError> {
    let due = state
        .last_fit
        .is_none_or(|last| state.iteration - last >= cfg.refit_every);
    if due && data.len() >= 2 {
        let theta = fit_map(data, prior, &cfg.fit, rng)?;
        state.fit_count += 1;
        state.last_fit = Some(state.iteration);
        state.cached_theta = Some(theta);
    }
    Ok(state
        .cached_theta
        .unwrap_or_else(|| default_theta(grid, cfg.fit.noise_variance)))
}

/// Index of the maximum; ties (within [`TIE_TOLERANCE`]) are broken uniformly at random.
pub fn argmax_with_ties<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let clean = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let max = values.iter().copied().map(clean).fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| clean(v) >= max - TIE_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

fn nearest(grid: &PointSet<f64>, candidates: &[usize], target: &[f64]) -> usize {
    let mut best = (f64::INFINITY, candidates[0]);
    for &i in candidates {
        let d: f64 = grid
            .point(i)
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// One `(l, σ_r²)` maximising the summed marginal likelihood over all tuning tasks.
pub fn fit_shared<R: Rng + ?Sized>(
    datasets: &[Dataset<f64>],
    opts: &FitOptions<f64>,
    rng: &mut R,
) -> Result<HyperParams<f64>, StrategyError> {
    if datasets.is_empty() {
        return Err(StrategyError::Config("fit_shared needs at least one dataset".into()));
    }
    let refs: Vec<&Dataset<f64>> = datasets.iter().collect();
    Ok(fit_hyperparams(&refs, None, opts, rng)?.0)
}

/// Per-task quotas filling `cap`: small tasks are taken whole, the remainder is split
/// evenly with a round-robin remainder in task order.
pub fn transfer_quotas(sizes: &[usize], cap: usize) -> Vec<usize> {
    let mut quota = vec![0usize; sizes.len()];
    let mut active: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    let mut remaining = cap;
    loop {
        if active.is_empty() {
            break;
        }
        let share = remaining / active.len();
        let (small, large): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&i| sizes[i] <= share);
        if small.is_empty() {
            let extra = remaining % active.len();
            for (rank, &i) in active.iter().enumerate() {
                quota[i] = share + usize::from(rank < extra);
            }
            break;
        }
        for &i in &small {
            quota[i] = sizes[i];
            remaining -= sizes[i];
        }
        active = large;
    }
    quota
}

/// Pool of past evaluations for direct transfer, capped at `cap` with per-task
/// stratification.
pub fn build_transfer_pool<R: Rng + ?Sized>(
    datasets: &[Dataset<f64>],
    cap: usize,
    rng: &mut R,
) -> Result<Dataset<f64>, StrategyError> {
    if cap == 0 {
        return Err(StrategyError::Config("transfer cap must be at least 1".into()));
    }
    let dim = datasets.first().map_or(2, Dataset::dim);
    let total: usize = datasets.iter().map(Dataset::len).sum();
    if total <= cap {
        return Ok(Dataset::union(dim, datasets)?);
    }
    let sizes: Vec<usize> = datasets.iter().map(Dataset::len).collect();
    let quotas = transfer_quotas(&sizes, cap);
    let mut pool = Dataset::empty(dim);
    for (d, &q) in datasets.iter().zip(&quotas) {
        let mut idx = sample_indices(rng, d.len(), q).into_vec();
        idx.sort_unstable();
        for i in idx {
            pool.push(d.inputs().point(i), d.targets()[i])?;
        }
    }
    Ok(pool)
}

/// Best observed input of each task, ordered by descending value (ties by task order).
pub fn extract_initial_points(datasets: &[Dataset<f64>]) -> Vec<Vec<f64>> {
    let mut best: Vec<(usize, f64, Vec<f64>)> = datasets
        .iter()
        .enumerate()
        .filter_map(|(n, d)| {
            let (i, &y) = d
                .targets()
                .iter()
                .enumerate()
                .reduce(|a, b| if b.1 > a.1 { b } else { a })?;
            Some((n, y, d.inputs().point(i).to_vec()))
        })
        .collect();
    best.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    best.into_iter().map(|(_, _, x)| x).collect()
}
