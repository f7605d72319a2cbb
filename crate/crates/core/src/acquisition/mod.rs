//! Expected improvement, UCB, and the importance-weighted candidate mixture.
//!
//! The mixture averages a base acquisition over candidate hyperparameters `θ_h`, each
//! weighted by the marginal likelihood `p(D | θ_h)` of the task data seen so far:
//!
//! `a(x) = Σ_h w_h a(x; θ_h) / Σ_h w_h`
//!
//! Weights are normalised in log space (max-subtraction) since marginal likelihoods of
//! different candidates routinely differ by hundreds of nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::{Dataset, GpError, GpPosterior, HyperParams, PointSet, Prediction};
use crate::scalar::Real;

/// Standard deviation below which EI falls back to its deterministic limit.
pub const EI_SIGMA_FLOOR: f64 = 1e-12;
pub const DEFAULT_UCB_BETA: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("every candidate has zero likelihood weight")]
    AllWeightsZero,
    #[error("empty query grid")]
    EmptyGrid,
    #[error("acquisition length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcquisitionKind {
    Ei,
    Ucb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionSpec<T> {
    pub kind: AcquisitionKind,
    pub ucb_beta: T,
}

impl<T: Real> AcquisitionSpec<T> {
    pub fn ei() -> Self {
        Self {
            kind: AcquisitionKind::Ei,
            ucb_beta: T::lit(DEFAULT_UCB_BETA),
        }
    }

    pub fn ucb(beta: T) -> Self {
        Self {
            kind: AcquisitionKind::Ucb,
            ucb_beta: beta,
        }
    }

    pub fn evaluate(&self, pred: &Prediction<T>, best: T) -> Vec<T> {
        match self.kind {
            AcquisitionKind::Ei => expected_improvement(pred, best),
            AcquisitionKind::Ucb => ucb(pred, self.ucb_beta),
        }
    }
}

#[inline]
fn std_normal_cdf<T: Real>(z: T) -> T {
    T::lit(0.5 * erfc(-z.to_f64_lossy() / std::f64::consts::SQRT_2))
}

#[inline]
fn std_normal_pdf<T: Real>(z: T) -> T {
    (-T::lit(0.5) * z * z).exp() / T::TAU().sqrt()
}

/// `(μ - best) Φ(z) + σ φ(z)` with `z = (μ - best)/σ`; `max(μ - best, 0)` when σ ≈ 0.
pub fn expected_improvement<T: Real>(pred: &Prediction<T>, best: T) -> Vec<T> {
    let floor = T::lit(EI_SIGMA_FLOOR);
    pred.mean
        .iter()
        .zip(&pred.variance)
        .map(|(&mu, &var)| {
            let sigma = var.max(T::zero()).sqrt();
            let gap = mu - best;
            if sigma <= floor {
                return gap.max(T::zero());
            }
            let z = gap / sigma;
            (gap * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(T::zero())
        })
        .collect()
}

/// `μ + √β σ`
pub fn ucb<T: Real>(pred: &Prediction<T>, beta: T) -> Vec<T> {
    let root = beta.sqrt();
    pred.mean
        .iter()
        .zip(&pred.variance)
        .map(|(&mu, &var)| mu + root * var.max(T::zero()).sqrt())
        .collect()
}

/// `log w_h = log p(D | θ_h)`; candidates whose likelihood is undefined get `-∞`.
pub fn candidate_log_weights<T: Real>(
    candidates: &[HyperParams<T>],
    data: &Dataset<T>,
) -> Result<Vec<T>, AcquisitionError> {
    let weights: Vec<T> = candidates
        .par_iter()
        .map(|theta| {
            GpPosterior::condition(data, theta)
                .map(|p| p.log_marginal_likelihood())
                .unwrap_or(T::neg_infinity())
        })
        .collect();
    if weights.iter().all(|w| !w.is_finite()) {
        return Err(AcquisitionError::AllWeightsZero);
    }
    Ok(weights)
}

/// Normalised linear weights `w_h / W` from log weights.
pub fn normalized_weights<T: Real>(log_weights: &[T]) -> Result<Vec<T>, AcquisitionError> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| w.is_finite())
        .reduce(T::max)
        .ok_or(AcquisitionError::AllWeightsZero)?;
    let raw: Vec<T> = log_weights
        .iter()
        .map(|&w| if w.is_finite() { (w - max).exp() } else { T::zero() })
        .collect();
    let total: T = raw.iter().copied().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted average of per-candidate acquisition vectors, summed in candidate order.
/// Candidates with zero weight are skipped (their vectors may be empty).
pub fn mix_acquisitions<T: Real>(log_weights: &[T], per_candidate: &[Vec<T>]) -> Result<Vec<T>, AcquisitionError> {
    if log_weights.len() != per_candidate.len() {
        return Err(AcquisitionError::LengthMismatch {
            expected: log_weights.len(),
            got: per_candidate.len(),
        });
    }
    let weights = normalized_weights(log_weights)?;
    let m = per_candidate
        .iter()
        .zip(&weights)
        .find(|(_, &w)| w > T::zero())
        .map(|(a, _)| a.len())
        .unwrap_or(0);
    let mut out = vec![T::zero(); m];
    for (acq, &w) in per_candidate.iter().zip(&weights) {
        if w == T::zero() {
            continue;
        }
        if acq.len() != m {
            return Err(AcquisitionError::LengthMismatch {
                expected: m,
                got: acq.len(),
            });
        }
        for (o, &a) in out.iter_mut().zip(acq) {
            *o += w * a;
        }
    }
    Ok(out)
}

/// Per-candidate log weight and base acquisition over `grid`.
pub fn per_candidate_acquisitions<T: Real>(
    candidates: &[HyperParams<T>],
    data: &Dataset<T>,
    grid: &PointSet<T>,
    base: &AcquisitionSpec<T>,
    best: T,
) -> (Vec<T>, Vec<Vec<T>>) {
    candidates
        .par_iter()
        .map(|theta| match GpPosterior::condition(data, theta) {
            Ok(post) => {
                let lml = post.log_marginal_likelihood();
                match post.predict(grid, false) {
                    Ok(pred) if lml.is_finite() => (lml, base.evaluate(&pred, best)),
                    _ => (T::neg_infinity(), Vec::new()),
                }
            }
            Err(_) => (T::neg_infinity(), Vec::new()),
        })
        .unzip()
}

/// Likelihood-weighted mixture of the base acquisition over all candidates.
pub fn plebo_acquisition<T: Real>(
    candidates: &[HyperParams<T>],
    data: &Dataset<T>,
    grid: &PointSet<T>,
    base: &AcquisitionSpec<T>,
    best: T,
) -> Result<Vec<T>, AcquisitionError> {
    if grid.is_empty() {
        return Err(AcquisitionError::EmptyGrid);
    }
    let (log_w, acqs) = per_candidate_acquisitions(candidates, data, grid, base, best);
    mix_acquisitions(&log_w, &acqs)
}

/// Base acquisition under a single fixed θ.
pub fn base_acquisition<T: Real>(
    theta: &HyperParams<T>,
    data: &Dataset<T>,
    grid: &PointSet<T>,
    base: &AcquisitionSpec<T>,
    best: T,
) -> Result<Vec<T>, AcquisitionError> {
    let pred = GpPosterior::condition(data, theta)?.predict(grid, false)?;
    Ok(base.evaluate(&pred, best))
}
