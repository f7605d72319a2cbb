//! Adaptive random-walk Metropolis-within-Gibbs over `(log η, log θ_1..θ_N)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EtaPrior, HyperPrior, PriorError};
use crate::gp::{fit_map, log_marginal_likelihood, Dataset, FitOptions, HyperParams, DEFAULT_NOISE_VARIANCE};
use crate::seeding;

/// Retained-fraction threshold below which a whole chain is discarded.
pub const CHAIN_KEEP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples_per_chain: usize,
    /// Initial random-walk step in log space.
    pub proposal_scale: f64,
    pub adapt_target: f64,
    pub seed: u64,
    pub eta_prior: EtaPrior,
    pub noise_variance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_samples_per_chain: 1000,
            proposal_scale: 0.1,
            adapt_target: 0.3,
            seed: 0,
            eta_prior: EtaPrior::default(),
            noise_variance: DEFAULT_NOISE_VARIANCE,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |m: &str| Err(PriorError::InvalidConfig(m.to_string()));
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1");
        }
        if self.n_samples_per_chain == 0 {
            return bad("n_samples_per_chain must be at least 1");
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return bad("adapt_target must lie in (0, 1)");
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return bad("proposal_scale must be positive");
        }
        if !(self.noise_variance >= 0.0) {
            return bad("noise_variance must be non-negative");
        }
        Ok(())
    }
}

/// Per-chain adaptation record. Scales are per block: `η` first, then each task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub scales_after_warmup: Vec<f64>,
    pub scales_final: Vec<f64>,
    pub acceptance_rates: Vec<f64>,
}

/// Pooled posterior draws. `theta_draws[n][k]` is task `n`'s hyperparameters in draw `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub eta_draws: Vec<HyperPrior>,
    pub theta_draws: Vec<Vec<HyperParams<f64>>>,
    pub chain_ids: Vec<usize>,
    pub log_joint_values: Vec<f64>,
    pub n_filtered: usize,
    pub seed: u64,
    pub noise_variance: f64,
    pub diagnostics: Vec<ChainDiagnostics>,
}

#[derive(Serialize, Deserialize)]
struct ThetaRecord {
    l: f64,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct PosteriorFile {
    seed: u64,
    noise_variance: f64,
    n_filtered: usize,
    eta_draws: Vec<HyperPrior>,
    theta_draws: Vec<Vec<ThetaRecord>>,
    log_joint: Vec<Option<f64>>,
    chains: Vec<usize>,
    #[serde(default)]
    diagnostics: Vec<ChainDiagnostics>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.eta_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta_draws.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.theta_draws.len()
    }

    pub fn to_json(&self) -> Result<String, PriorError> {
        let file = PosteriorFile {
            seed: self.seed,
            noise_variance: self.noise_variance,
            n_filtered: self.n_filtered,
            eta_draws: self.eta_draws.clone(),
            theta_draws: self
                .theta_draws
                .iter()
                .map(|task| {
                    task.iter()
                        .map(|t| ThetaRecord {
                            l: t.lengthscale,
                            v: t.signal_variance,
                        })
                        .collect()
                })
                .collect(),
            log_joint: self
                .log_joint_values
                .iter()
                .map(|&v| v.is_finite().then_some(v))
                .collect(),
            chains: self.chain_ids.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self, PriorError> {
        let f: PosteriorFile = serde_json::from_str(s)?;
        let n = f.eta_draws.len();
        if f.log_joint.len() != n || f.chains.len() != n || f.theta_draws.iter().any(|t| t.len() != n) {
            return Err(PriorError::InvalidConfig("posterior file has misaligned draws".into()));
        }
        Ok(Self {
            eta_draws: f.eta_draws,
            theta_draws: f
                .theta_draws
                .into_iter()
                .map(|task| {
                    task.into_iter()
                        .map(|r| HyperParams {
                            lengthscale: r.l,
                            signal_variance: r.v,
                            noise_variance: f.noise_variance,
                        })
                        .collect()
                })
                .collect(),
            chain_ids: f.chains,
            log_joint_values: f
                .log_joint
                .into_iter()
                .map(|v| v.unwrap_or(f64::NEG_INFINITY))
                .collect(),
            n_filtered: f.n_filtered,
            seed: f.seed,
            noise_variance: f.noise_variance,
            diagnostics: f.diagnostics,
        })
    }

    fn select(&self, keep: &[usize]) -> Self {
        Self {
            eta_draws: keep.iter().map(|&k| self.eta_draws[k]).collect(),
            theta_draws: self
                .theta_draws
                .iter()
                .map(|task| keep.iter().map(|&k| task[k]).collect())
                .collect(),
            chain_ids: keep.iter().map(|&k| self.chain_ids[k]).collect(),
            log_joint_values: keep.iter().map(|&k| self.log_joint_values[k]).collect(),
            n_filtered: self.n_filtered + (self.len() - keep.len()),
            seed: self.seed,
            noise_variance: self.noise_variance,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Drops draws with a non-finite log joint, then whole chains keeping less than 10% of
/// their draws.
pub fn filter_samples(raw: &PosteriorSamples) -> Result<PosteriorSamples, PriorError> {
    let mut per_chain: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (k, &c) in raw.chain_ids.iter().enumerate() {
        let e = per_chain.entry(c).or_default();
        e.0 += 1;
        if raw.log_joint_values[k].is_finite() {
            e.1 += 1;
        }
    }
    let keep: Vec<usize> = (0..raw.len())
        .filter(|&k| {
            let (total, finite) = per_chain[&raw.chain_ids[k]];
            raw.log_joint_values[k].is_finite() && (finite as f64) >= CHAIN_KEEP_FRACTION * total as f64
        })
        .collect();
    if keep.is_empty() {
        return Err(PriorError::InferenceFailed {
            reason: format!("all {} draws were filtered", raw.len()),
        });
    }
    Ok(raw.select(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum BlockKind {
    Eta,
    Theta(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub kind: BlockKind,
    pub coords: Vec<usize>,
}

const ETA_DIM: usize = 4;

/// State layout: `[log l_shape, log l_scale, log v_shape, log v_scale, log l_1, log v_1, ...]`.
pub(crate) struct Hierarchy<'a> {
    pub datasets: &'a [Dataset<f64>],
    pub eta_prior: EtaPrior,
    pub noise: f64,
    /// Constant added to `log p(η)`. Leaves the sampler's trajectory unchanged.
    pub log_offset: f64,
}

impl Hierarchy<'_> {
    pub fn dim(&self) -> usize {
        ETA_DIM + 2 * self.datasets.len()
    }

    pub fn eta(&self, s: &[f64]) -> HyperPrior {
        HyperPrior::from_array([s[0].exp(), s[1].exp(), s[2].exp(), s[3].exp()])
    }

    pub fn theta(&self, s: &[f64], n: usize) -> HyperParams<f64> {
        let o = ETA_DIM + 2 * n;
        HyperParams::from_log(s[o], s[o + 1], self.noise)
    }

    pub fn lml(&self, s: &[f64], n: usize) -> f64 {
        log_marginal_likelihood(&self.datasets[n], &self.theta(s, n)).unwrap_or(f64::NEG_INFINITY)
    }

    /// `log p(log θ_n | η)`: gamma densities plus the log-transform Jacobian.
    fn theta_prior_logs(&self, s: &[f64], n: usize) -> f64 {
        let o = ETA_DIM + 2 * n;
        let (ll, lv) = (s[o], s[o + 1]);
        gamma_log_of_log(ll, s[0], s[1]) + gamma_log_of_log(lv, s[2], s[3])
    }

    /// Terms of the log-space target that depend on `η`.
    fn eta_terms(&self, s: &[f64]) -> Vec<f64> {
        let mut terms = vec![self.log_offset, self.eta_prior.log_density_of_logs(&s[..ETA_DIM])];
        terms.extend((0..self.datasets.len()).map(|n| self.theta_prior_logs(s, n)));
        terms
    }

    /// Log acceptance ratio of an `η` move from `cur` to `prop`.
    pub fn eta_log_ratio(&self, cur: &[f64], prop: &[f64]) -> f64 {
        log_ratio_of_terms(&self.eta_terms(cur), &self.eta_terms(prop))
    }

    /// Log acceptance ratio of a `θ_n` move, given the marginal likelihoods at both states.
    pub fn theta_log_ratio(&self, cur: &[f64], prop: &[f64], n: usize, lml_cur: f64, lml_prop: f64) -> f64 {
        log_ratio_of_terms(
            &[self.theta_prior_logs(cur, n), lml_cur],
            &[self.theta_prior_logs(prop, n), lml_prop],
        )
    }

    /// Natural-scale log joint, reusing cached marginal likelihoods.
    pub fn log_joint_natural(&self, s: &[f64], lmls: &[f64]) -> f64 {
        let eta = self.eta(s);
        let mut total = self.log_offset + self.eta_prior.log_density(&eta);
        for (n, &lml) in lmls.iter().enumerate() {
            total += eta
                .log_density(&self.theta(s, n))
                .unwrap_or(f64::NEG_INFINITY)
                + lml;
        }
        total
    }

    pub fn default_blocks(&self) -> Vec<Block> {
        let mut blocks = vec![Block {
            kind: BlockKind::Eta,
            coords: (0..ETA_DIM).collect(),
        }];
        for n in 0..self.datasets.len() {
            let o = ETA_DIM + 2 * n;
            blocks.push(Block {
                kind: BlockKind::Theta(n),
                coords: vec![o, o + 1],
            });
        }
        blocks
    }
}

/// Sum of termwise differences, so that terms shared by both states cancel exactly.
/// An undefined proposal is always rejected and an undefined current state always left.
fn log_ratio_of_terms(cur: &[f64], prop: &[f64]) -> f64 {
    let bad = |v: &f64| v.is_nan() || *v == f64::NEG_INFINITY;
    if prop.iter().any(bad) {
        f64::NEG_INFINITY
    } else if cur.iter().any(bad) {
        f64::INFINITY
    } else {
        cur.iter().zip(prop).map(|(c, p)| p - c).sum()
    }
}

/// log Γ(e^u; e^a, e^b) + u, evaluated in log coordinates.
fn gamma_log_of_log(u: f64, log_shape: f64, log_scale: f64) -> f64 {
    let shape = log_shape.exp();
    let x = u.exp();
    let lg = statrs::function::gamma::ln_gamma(shape);
    let v = shape * u - x / log_scale.exp() - shape * log_scale - lg;
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

pub(crate) struct ChainOutput {
    pub states: Vec<Vec<f64>>,
    pub log_joint: Vec<f64>,
    pub diagnostics: ChainDiagnostics,
}

/// One adaptive Metropolis-within-Gibbs chain. Proposal scales adapt by Robbins-Monro
/// toward `cfg.adapt_target` during warmup and are frozen afterwards.
pub(crate) fn run_chain<R: Rng>(
    model: &Hierarchy<'_>,
    blocks: &[Block],
    init: Vec<f64>,
    cfg: &McmcConfig,
    chain: usize,
    rng: &mut R,
) -> ChainOutput {
    let n_tasks = model.datasets.len();
    let mut s = init;
    let mut lmls: Vec<f64> = (0..n_tasks).map(|n| model.lml(&s, n)).collect();
    let mut log_scales = vec![cfg.proposal_scale.ln(); blocks.len()];
    let mut accepted = vec![0usize; blocks.len()];
    let mut scales_after_warmup = Vec::new();
    let total = cfg.n_warmup + cfg.n_samples_per_chain;
    let mut states = Vec::with_capacity(cfg.n_samples_per_chain);
    let mut log_joint = Vec::with_capacity(cfg.n_samples_per_chain);
    let mut proposal = s.clone();

    for it in 0..total {
        let warm = it < cfg.n_warmup;
        if it == cfg.n_warmup {
            scales_after_warmup = log_scales.iter().map(|v| v.exp()).collect();
        }
        for (b, block) in blocks.iter().enumerate() {
            let step = log_scales[b].exp();
            proposal.copy_from_slice(&s);
            propose(block, &mut proposal, step, rng);
            let (log_ratio, new_lml) = match block.kind {
                BlockKind::Eta => (model.eta_log_ratio(&s, &proposal), None),
                BlockKind::Theta(n) => {
                    let lml = model.lml(&proposal, n);
                    (model.theta_log_ratio(&s, &proposal, n, lmls[n], lml), Some((n, lml)))
                }
            };
            let accept_prob = log_ratio.min(0.0).exp();
            let u: f64 = rng.random();
            if u < accept_prob {
                std::mem::swap(&mut s, &mut proposal);
                if let Some((n, lml)) = new_lml {
                    lmls[n] = lml;
                }
                if !warm {
                    accepted[b] += 1;
                }
            }
            if warm {
                let gain = (it as f64 + 1.0).powf(-0.6);
                log_scales[b] += gain * (accept_prob - cfg.adapt_target);
                log_scales[b] = log_scales[b].clamp(-12.0, 3.0);
            }
        }
        if !warm {
            log_joint.push(model.log_joint_natural(&s, &lmls));
            states.push(s.clone());
        }
    }
    if cfg.n_warmup == 0 {
        scales_after_warmup = vec![cfg.proposal_scale; blocks.len()];
    }
    let n = cfg.n_samples_per_chain.max(1) as f64;
    ChainOutput {
        states,
        log_joint,
        diagnostics: ChainDiagnostics {
            chain,
            scales_after_warmup,
            scales_final: log_scales.iter().map(|v| v.exp()).collect(),
            acceptance_rates: accepted.iter().map(|&a| a as f64 / n).collect(),
        },
    }
}

fn propose<R: Rng>(block: &Block, s: &mut [f64], step: f64, rng: &mut R) {
    let mut z = || -> f64 { StandardNormal.sample(rng) };
    match block.kind {
        // Shape and mean move independently: log scale absorbs the shape move so the
        // gamma mean is only perturbed by its own increment. Volume-preserving.
        BlockKind::Eta if block.coords == [0, 1, 2, 3] => {
            for pair in [0, 2] {
                let d_shape = step * z();
                let d_mean = step * z();
                s[pair] += d_shape;
                s[pair + 1] += d_mean - d_shape;
            }
        }
        _ => {
            for &c in &block.coords {
                s[c] += step * z();
            }
        }
    }
}

fn initial_state<R: Rng>(model: &Hierarchy<'_>, centres: &[HyperParams<f64>], rng: &mut R) -> Vec<f64> {
    let mut s = vec![0.0; model.dim()];
    let mut jitter = || -> f64 { 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) };
    for (n, c) in centres.iter().enumerate() {
        let o = ETA_DIM + 2 * n;
        s[o] = c.lengthscale.ln() + jitter();
        s[o + 1] = c.signal_variance.ln() + jitter();
    }
    let n = centres.len() as f64;
    let mean_l = centres.iter().map(|c| c.lengthscale).sum::<f64>() / n;
    let mean_v = centres.iter().map(|c| c.signal_variance).sum::<f64>() / n;
    let (ls, vs) = (2.0f64.ln() + jitter(), 2.0f64.ln() + jitter());
    s[0] = ls;
    s[1] = mean_l.ln() - ls;
    s[2] = vs;
    s[3] = mean_v.ln() - vs;
    s
}

/// Samples the hierarchical posterior and returns filtered, pooled draws.
pub fn run_mcmc(datasets: &[Dataset<f64>], cfg: &McmcConfig) -> Result<PosteriorSamples, PriorError> {
    let raw = run_mcmc_unfiltered(datasets, cfg)?;
    let filtered = filter_samples(&raw)?;
    let min_keep = cfg.n_chains * cfg.n_samples_per_chain / 10;
    if filtered.len() < min_keep.max(1) {
        return Err(PriorError::InferenceFailed {
            reason: format!(
                "only {} of {} draws survived filtering ({} chains)",
                filtered.len(),
                raw.len(),
                cfg.n_chains
            ),
        });
    }
    Ok(filtered)
}

pub(crate) fn run_mcmc_unfiltered(
    datasets: &[Dataset<f64>],
    cfg: &McmcConfig,
) -> Result<PosteriorSamples, PriorError> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(PriorError::InvalidConfig("need at least one tuning dataset".into()));
    }
    if let Some(n) = datasets.iter().position(|d| d.len() < 2) {
        return Err(PriorError::InvalidConfig(format!(
            "tuning dataset {n} has fewer than 2 observations"
        )));
    }
    let model = Hierarchy {
        datasets,
        eta_prior: cfg.eta_prior,
        noise: cfg.noise_variance,
        log_offset: 0.0,
    };
    let fit_opts = FitOptions::default().with_noise(cfg.noise_variance).with_restarts(3);
    let centres: Vec<HyperParams<f64>> = datasets
        .iter()
        .enumerate()
        .map(|(n, d)| {
            let mut rng = seeding::stream(cfg.seed, &[0x1a17, n as u64]);
            fit_map(d, None, &fit_opts, &mut rng)
                .unwrap_or(HyperParams::from_log(0.0, 0.0, cfg.noise_variance))
        })
        .collect();
    let blocks = model.default_blocks();
    let outputs: Vec<ChainOutput> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeding::stream(cfg.seed, &[0xc4a1, c as u64]);
            let init = initial_state(&model, &centres, &mut rng);
            run_chain(&model, &blocks, init, cfg, c, &mut rng)
        })
        .collect();

    let n_tasks = datasets.len();
    let mut post = PosteriorSamples {
        eta_draws: Vec::new(),
        theta_draws: vec![Vec::new(); n_tasks],
        chain_ids: Vec::new(),
        log_joint_values: Vec::new(),
        n_filtered: 0,
        seed: cfg.seed,
        noise_variance: cfg.noise_variance,
        diagnostics: Vec::new(),
    };
    for out in outputs {
        for (s, lj) in out.states.iter().zip(&out.log_joint) {
            post.eta_draws.push(model.eta(s));
            for (n, draws) in post.theta_draws.iter_mut().enumerate() {
                draws.push(model.theta(s, n));
            }
            post.chain_ids.push(out.diagnostics.chain);
            post.log_joint_values.push(*lj);
        }
        post.diagnostics.push(out.diagnostics);
    }
    Ok(post)
}
