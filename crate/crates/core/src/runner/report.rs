//! Comparison of inferred and true hyperpriors / per-task hyperparameters.

use std::fmt::Write as _;

use serde::Serialize;

use crate::gp::{log_marginal_likelihood, Dataset, HyperParams};
use crate::prior::{gamma_logpdf, posterior_mean_thetas, summarize_eta, HyperPrior, PosteriorSamples};

/// Tolerance (nats) for counting an inferred fit as matching the true one.
pub const LML_TOLERANCE_NATS: f64 = 2.0;
const DENSITY_POINTS: usize = 100;
const MAX_DENSITY_DRAWS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskQuality {
    pub task: usize,
    pub inferred_l: f64,
    pub inferred_v: f64,
    pub lml_inferred: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lml_true: Option<f64>,
}

/// Pointwise posterior quantiles of the implied gamma density on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurve {
    pub x: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorQualityReport {
    pub eta_posterior_mean: HyperPrior,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_true: Option<HyperPrior>,
    pub lengthscale_mean_inferred: f64,
    pub signal_variance_mean_inferred: f64,
    pub tasks: Vec<TaskQuality>,
    /// Fraction of tasks with inferred LML ≥ true LML − 2 nats.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction_within_tolerance: Option<f64>,
    pub lengthscale_density: DensityCurve,
    pub signal_variance_density: DensityCurve,
    pub n_draws: usize,
    pub n_filtered: usize,
}

impl PriorQualityReport {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    /// Per-task table: `task,inferred_l,inferred_v,lml_inferred[,true_l,true_v,lml_true]`.
    pub fn tasks_csv(&self) -> String {
        let with_truth = self.tasks.iter().any(|t| t.lml_true.is_some());
        let mut out = String::from("task,inferred_l,inferred_v,lml_inferred");
        if with_truth {
            out.push_str(",true_l,true_v,lml_true");
        }
        out.push('\n');
        for t in &self.tasks {
            let _ = write!(out, "{},{},{},{}", t.task, t.inferred_l, t.inferred_v, t.lml_inferred);
            if with_truth {
                let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let _ = write!(out, ",{},{},{}", f(t.true_l), f(t.true_v), f(t.lml_true));
            }
            out.push('\n');
        }
        out
    }

    /// Long-format density table: `parameter,x,q05,q50,q95[,truth]`.
    pub fn density_csv(&self) -> String {
        let with_truth = self.lengthscale_density.truth.is_some();
        let mut out = String::from("parameter,x,q05,q50,q95");
        if with_truth {
            out.push_str(",truth");
        }
        out.push('\n');
        for (name, c) in [("lengthscale", &self.lengthscale_density), ("signal_variance", &self.signal_variance_density)] {
            for i in 0..c.x.len() {
                let _ = write!(out, "{name},{},{},{},{}", c.x[i], c.q05[i], c.q50[i], c.q95[i]);
                if let Some(t) = &c.truth {
                    let _ = write!(out, ",{}", t[i]);
                }
                out.push('\n');
            }
        }
        out
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn density_curve(
    draws: &[(f64, f64)],
    x_max: f64,
    truth: Option<(f64, f64)>,
) -> DensityCurve {
    let x: Vec<f64> = (1..=DENSITY_POINTS)
        .map(|i| x_max * i as f64 / DENSITY_POINTS as f64)
        .collect();
    let pdf = |xv: f64, (shape, scale): (f64, f64)| gamma_logpdf(xv, shape, scale).map(f64::exp).unwrap_or(0.0);
    let mut q05 = Vec::with_capacity(x.len());
    let mut q50 = Vec::with_capacity(x.len());
    let mut q95 = Vec::with_capacity(x.len());
    let mut col = Vec::with_capacity(draws.len());
    for &xv in &x {
        col.clear();
        col.extend(draws.iter().map(|&d| pdf(xv, d)));
        col.sort_by(f64::total_cmp);
        q05.push(quantile(&col, 0.05));
        q50.push(quantile(&col, 0.5));
        q95.push(quantile(&col, 0.95));
    }
    DensityCurve {
        truth: truth.map(|t| x.iter().map(|&xv| pdf(xv, t)).collect()),
        x,
        q05,
        q50,
        q95,
    }
}

/// Per-task LML at the posterior-mean `θ_n` (and at the true `θ_n` if known), plus
/// density summaries of the implied gamma priors.
pub fn prior_quality_report(
    post: &PosteriorSamples,
    truth: Option<(&HyperPrior, &[HyperParams<f64>])>,
    datasets: &[Dataset<f64>],
) -> Result<PriorQualityReport, crate::prior::PriorError> {
    let eta_mean = summarize_eta(post)?;
    let thetas = posterior_mean_thetas(post);
    let mut tasks = Vec::with_capacity(datasets.len());
    let mut within = 0usize;
    for (n, (d, theta)) in datasets.iter().zip(&thetas).enumerate() {
        let lml_inferred = log_marginal_likelihood(d, theta).unwrap_or(f64::NEG_INFINITY);
        let true_theta = truth.and_then(|(_, ts)| ts.get(n)).copied();
        let lml_true = true_theta.map(|t| {
            let t = HyperParams {
                noise_variance: theta.noise_variance,
                ..t
            };
            log_marginal_likelihood(d, &t).unwrap_or(f64::NEG_INFINITY)
        });
        if lml_true.is_some_and(|lt| lml_inferred >= lt - LML_TOLERANCE_NATS) {
            within += 1;
        }
        tasks.push(TaskQuality {
            task: n,
            inferred_l: theta.lengthscale,
            inferred_v: theta.signal_variance,
            lml_inferred,
            true_l: true_theta.map(|t| t.lengthscale),
            true_v: true_theta.map(|t| t.signal_variance),
            lml_true,
        });
    }
    let with_truth = tasks.iter().filter(|t| t.lml_true.is_some()).count();
    let fraction_within_tolerance = (with_truth > 0).then(|| within as f64 / with_truth as f64);

    let stride = post.len().div_ceil(MAX_DENSITY_DRAWS).max(1);
    let sub: Vec<&HyperPrior> = post.eta_draws.iter().step_by(stride).collect();
    let eta_true = truth.map(|(e, _)| *e);
    let l_ref = eta_mean.lengthscale_mean().max(eta_true.map_or(0.0, |e| e.lengthscale_mean()));
    let v_ref = eta_mean.signal_variance_mean().max(eta_true.map_or(0.0, |e| e.signal_variance_mean()));
    let lengthscale_density = density_curve(
        &sub.iter().map(|e| (e.l_shape, e.l_scale)).collect::<Vec<_>>(),
        4.0 * l_ref,
        eta_true.map(|e| (e.l_shape, e.l_scale)),
    );
    let signal_variance_density = density_curve(
        &sub.iter().map(|e| (e.v_shape, e.v_scale)).collect::<Vec<_>>(),
        4.0 * v_ref,
        eta_true.map(|e| (e.v_shape, e.v_scale)),
    );
    let n = post.len() as f64;
    Ok(PriorQualityReport {
        eta_posterior_mean: eta_mean,
        eta_true,
        lengthscale_mean_inferred: post.eta_draws.iter().map(|e| e.lengthscale_mean()).sum::<f64>() / n,
        signal_variance_mean_inferred: post.eta_draws.iter().map(|e| e.signal_variance_mean()).sum::<f64>() / n,
        tasks,
        fraction_within_tolerance,
        lengthscale_density,
        signal_variance_density,
        n_draws: post.len(),
        n_filtered: post.n_filtered,
    })
}
