//! Hierarchical prior over GP hyperparameters.
//!
//! Each tuning task `n` has its own `θ_n = (l_n, σ²_{r,n})`, drawn from independent gamma
//! distributions whose shape/scale form the shared hyperprior `η`. This module samples
//! `(η, θ_1..θ_N)` given the tuning data, filters stuck chains and draws candidate
//! hyperparameters for new tasks.

mod candidates;
mod mcmc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::gp::{log_marginal_likelihood, Dataset, HyperParams};
use crate::scalar::Real;

pub use candidates::{sample_candidates, CandidateSet};
pub use mcmc::{filter_samples, run_mcmc, ChainDiagnostics, McmcConfig, PosteriorSamples};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("inference failed: {reason}")]
    InferenceFailed { reason: String },
    #[error("serialisation error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Gamma shape/scale pairs generating lengthscale and signal variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior<T = f64> {
    pub l_shape: T,
    pub l_scale: T,
    pub v_shape: T,
    pub v_scale: T,
}

impl<T: Real> HyperPrior<T> {
    pub fn new(l_shape: T, l_scale: T, v_shape: T, v_scale: T) -> Result<Self, PriorError> {
        let p = Self {
            l_shape,
            l_scale,
            v_shape,
            v_scale,
        };
        if p.as_array().iter().all(|v| v.is_finite() && *v > T::zero()) {
            Ok(p)
        } else {
            Err(PriorError::Domain(format!("hyperprior entries must be positive: {p:?}")))
        }
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.l_shape, self.l_scale, self.v_shape, self.v_scale]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self {
            l_shape: a[0],
            l_scale: a[1],
            v_shape: a[2],
            v_scale: a[3],
        }
    }

    pub fn lengthscale_mean(&self) -> T {
        self.l_shape * self.l_scale
    }

    pub fn signal_variance_mean(&self) -> T {
        self.v_shape * self.v_scale
    }

    /// `log p(θ | η)` for the two kernel hyperparameters.
    pub fn log_density(&self, theta: &HyperParams<T>) -> Result<T, PriorError> {
        Ok(gamma_logpdf(theta.lengthscale, self.l_shape, self.l_scale)?
            + gamma_logpdf(theta.signal_variance, self.v_shape, self.v_scale)?)
    }
}

impl HyperPrior<f64> {
    /// Synthetic-benchmark generator: `l ~ Γ(5, 0.01)`, `σ_r² ~ Γ(2, 2)`.
    pub const SYNTHETIC: Self = Self {
        l_shape: 5.0,
        l_scale: 0.01,
        v_shape: 2.0,
        v_scale: 2.0,
    };
}

/// Log density of the gamma distribution in shape/scale form.
pub fn gamma_logpdf<T: Real>(x: T, shape: T, scale: T) -> Result<T, PriorError> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(PriorError::Domain(format!("gamma density needs x > 0, got {x}")));
    }
    if !(shape > T::zero() && scale > T::zero()) {
        return Err(PriorError::Domain(format!(
            "gamma shape and scale must be positive, got ({shape}, {scale})"
        )));
    }
    let lg = T::lit(ln_gamma(shape.to_f64_lossy()));
    Ok((shape - T::one()) * x.ln() - x / scale - shape * scale.ln() - lg)
}

/// Independent log-normal top-level prior `p(η)` on each of the four coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaPrior {
    /// Log of the median of every coordinate.
    pub log_median: f64,
    /// Standard deviation in log space.
    pub log_sd: f64,
}

impl Default for EtaPrior {
    fn default() -> Self {
        Self {
            log_median: 0.0,
            log_sd: 2.0,
        }
    }
}

impl EtaPrior {
    /// Natural-scale log density of `η`.
    pub fn log_density(&self, eta: &HyperPrior) -> f64 {
        eta.as_array().iter().map(|&x| self.lognormal_logpdf(x)).sum()
    }

    fn lognormal_logpdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let z = (x.ln() - self.log_median) / self.log_sd;
        -x.ln() - self.log_sd.ln() - 0.5 * std::f64::consts::TAU.ln() - 0.5 * z * z
    }

    /// Density of `log η` (natural density times the Jacobian `Π η_k`).
    pub(crate) fn log_density_of_logs(&self, log_eta: &[f64]) -> f64 {
        log_eta
            .iter()
            .map(|&u| {
                let z = (u - self.log_median) / self.log_sd;
                -self.log_sd.ln() - 0.5 * std::f64::consts::TAU.ln() - 0.5 * z * z
            })
            .sum()
    }
}

/// `log p(η) + Σ_n [log p(θ_n | η) + log p(D_n | θ_n)]`.
///
/// Returns `-∞` when any marginal likelihood is undefined.
pub fn log_joint(
    eta: &HyperPrior,
    thetas: &[HyperParams<f64>],
    datasets: &[Dataset<f64>],
    eta_prior: &EtaPrior,
) -> Result<f64, PriorError> {
    if thetas.len() != datasets.len() || thetas.is_empty() {
        return Err(PriorError::InvalidConfig(format!(
            "need matching non-empty θ and dataset lists, got {} and {}",
            thetas.len(),
            datasets.len()
        )));
    }
    let mut total = eta_prior.log_density(eta);
    for (theta, data) in thetas.iter().zip(datasets) {
        total += eta.log_density(theta)?;
        match log_marginal_likelihood(data, theta) {
            Ok(v) => total += v,
            Err(_) => return Ok(f64::NEG_INFINITY),
        }
    }
    Ok(total)
}

/// Coordinate-wise mean of the `η` draws.
pub fn summarize_eta(post: &PosteriorSamples) -> Result<HyperPrior, PriorError> {
    let n = post.eta_draws.len();
    if n == 0 {
        return Err(PriorError::InferenceFailed {
            reason: "no posterior draws".into(),
        });
    }
    let mut acc = [0.0; 4];
    for eta in &post.eta_draws {
        for (a, v) in acc.iter_mut().zip(eta.as_array()) {
            *a += v;
        }
    }
    Ok(HyperPrior::from_array(acc.map(|a| a / n as f64)))
}

/// Coordinate-wise mean of the per-task `θ_n` draws.
pub fn posterior_mean_thetas(post: &PosteriorSamples) -> Vec<HyperParams<f64>> {
    post.theta_draws
        .iter()
        .map(|draws| {
            let n = draws.len().max(1) as f64;
            let l = draws.iter().map(|t| t.lengthscale).sum::<f64>() / n;
            let v = draws.iter().map(|t| t.signal_variance).sum::<f64>() / n;
            HyperParams {
                lengthscale: l,
                signal_variance: v,
                noise_variance: post.noise_variance,
            }
        })
        .collect()
}
