//! Candidate hyperparameters drawn from the learned prior.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{PosteriorSamples, PriorError};
use crate::gp::HyperParams;
use crate::seeding;

/// `H` hyperparameter candidates `θ^cand`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub thetas: Vec<HyperParams<f64>>,
    pub source_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CandidateRecord {
    l: f64,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct CandidateFile {
    thetas: Vec<CandidateRecord>,
    seed: u64,
    noise_variance: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// Single-candidate set.
    pub fn singleton(theta: HyperParams<f64>) -> Self {
        Self {
            thetas: vec![theta],
            source_seed: 0,
        }
    }

    pub fn to_json(&self) -> Result<String, PriorError> {
        let noise_variance = self.thetas.first().map(|t| t.noise_variance).unwrap_or(0.0);
        let file = CandidateFile {
            thetas: self
                .thetas
                .iter()
                .map(|t| CandidateRecord {
                    l: t.lengthscale,
                    v: t.signal_variance,
                })
                .collect(),
            seed: self.source_seed,
            noise_variance,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self, PriorError> {
        let f: CandidateFile = serde_json::from_str(s)?;
        let thetas = f
            .thetas
            .into_iter()
            .map(|r| {
                HyperParams::new(r.l, r.v, f.noise_variance)
                    .map_err(|e| PriorError::Domain(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if thetas.is_empty() {
            return Err(PriorError::InvalidConfig("candidate file is empty".into()));
        }
        Ok(Self {
            thetas,
            source_seed: f.seed,
        })
    }
}

/// Draws `h` candidates: each picks an `η` uniformly from the posterior draws, then
/// `l ~ Γ(l_shape, l_scale)` and `σ_r² ~ Γ(v_shape, v_scale)`.
pub fn sample_candidates(post: &PosteriorSamples, h: usize, seed: u64) -> Result<CandidateSet, PriorError> {
    if post.is_empty() {
        return Err(PriorError::InferenceFailed {
            reason: "cannot sample candidates from an empty posterior".into(),
        });
    }
    if h == 0 {
        return Err(PriorError::InvalidConfig("H must be at least 1".into()));
    }
    let mut rng = seeding::stream(seed, &[0xca4d]);
    let mut thetas = Vec::with_capacity(h);
    while thetas.len() < h {
        let eta = post.eta_draws[rng.random_range(0..post.len())];
        let l = draw_gamma(eta.l_shape, eta.l_scale, &mut rng)?;
        let v = draw_gamma(eta.v_shape, eta.v_scale, &mut rng)?;
        // Γ draws can underflow to exactly zero for tiny shapes; redraw those.
        if l > 0.0 && v > 0.0 && l.is_finite() && v.is_finite() {
            thetas.push(HyperParams {
                lengthscale: l,
                signal_variance: v,
                noise_variance: post.noise_variance,
            });
        }
    }
    Ok(CandidateSet {
        thetas,
        source_seed: seed,
    })
}

fn draw_gamma<R: Rng>(shape: f64, scale: f64, rng: &mut R) -> Result<f64, PriorError> {
    Gamma::new(shape, scale)
        .map(|g| g.sample(rng))
        .map_err(|e| PriorError::Domain(format!("gamma({shape}, {scale}): {e}")))
}
