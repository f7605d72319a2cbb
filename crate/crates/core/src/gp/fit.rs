//! Maximum-likelihood and MAP hyperparameter fitting in log space.

use rand::Rng;

use super::{lml_with_gradient, Dataset, GpError, HyperParams};
use crate::prior::{gamma_logpdf, HyperPrior};
use crate::scalar::Real;

const START_EPS: f64 = 1e-6;
const MIN_SIGNAL_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub restarts: usize,
    pub noise_variance: T,
    pub max_iters: usize,
    /// Relative objective change below which a restart is considered converged.
    pub tolerance: T,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            restarts: 5,
            noise_variance: T::lit(super::DEFAULT_NOISE_VARIANCE),
            max_iters: 300,
            tolerance: T::lit(1e-10),
        }
    }
}

impl<T: Real> FitOptions<T> {
    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_noise(mut self, noise_variance: T) -> Self {
        self.noise_variance = noise_variance;
        self
    }
}

/// Box constraints and start ranges, in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitBounds<T> {
    pub log_l: (T, T),
    pub log_v: (T, T),
    pub start_log_l: (T, T),
    pub start_log_v: (T, T),
}

impl<T: Real> FitBounds<T> {
    /// Starts are log-uniform with `l` in [smallest spacing, diameter] and `σ_r²` in
    /// [0.01 var(y), 100 var(y)] (plus a small epsilon). The search box extends the
    /// lengthscale range by a factor 10 on both sides.
    pub fn from_datasets(datasets: &[&Dataset<T>]) -> Self {
        let (mut lo, mut hi) = (T::infinity(), T::zero());
        for d in datasets {
            if let Some((a, b)) = d.inputs().distance_range() {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        if !(hi > T::zero()) {
            lo = T::lit(1e-3);
            hi = T::one();
        }
        let var = pooled_variance(datasets);
        let eps = T::lit(START_EPS);
        let ten = T::lit(10.0);
        let v_lo = T::lit(MIN_SIGNAL_VARIANCE);
        let v_hi = T::lit(1e3) * var + T::one();
        Self {
            log_l: ((lo / ten).ln(), (hi * ten).ln()),
            log_v: (v_lo.ln(), v_hi.ln()),
            start_log_l: (lo.ln(), hi.ln()),
            start_log_v: ((T::lit(0.01) * var + eps).ln(), (T::lit(100.0) * var + eps).ln()),
        }
    }

    fn clamp(&self, x: [T; 2]) -> [T; 2] {
        [
            x[0].max(self.log_l.0).min(self.log_l.1),
            x[1].max(self.log_v.0).min(self.log_v.1),
        ]
    }
}

fn pooled_variance<T: Real>(datasets: &[&Dataset<T>]) -> T {
    let ys: Vec<T> = datasets.iter().flat_map(|d| d.targets().iter().copied()).collect();
    if ys.is_empty() {
        return T::one();
    }
    let n = T::from_usize(ys.len()).unwrap();
    let mean = ys.iter().copied().sum::<T>() / n;
    ys.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>() / n
}

/// Accepted objective values per restart, in iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace<T> {
    pub restarts: Vec<Vec<T>>,
}

impl<T: Real> FitTrace<T> {
    pub fn is_monotone(&self) -> bool {
        self.restarts
            .iter()
            .all(|r| r.windows(2).all(|w| w[1] >= w[0]))
    }
}

struct Objective<'a, T> {
    datasets: &'a [&'a Dataset<T>],
    prior: Option<&'a HyperPrior<T>>,
    noise: T,
}

impl<T: Real> Objective<'_, T> {
    fn eval(&self, x: [T; 2]) -> Option<(T, [T; 2])> {
        let theta = HyperParams::from_log(x[0], x[1], self.noise);
        let mut f = T::zero();
        let mut g = [T::zero(); 2];
        for d in self.datasets {
            let (v, dv) = lml_with_gradient(d, &theta).ok()?;
            f += v;
            g[0] += dv[0];
            g[1] += dv[1];
        }
        if let Some(p) = self.prior {
            f += gamma_logpdf(theta.lengthscale, p.l_shape, p.l_scale).ok()?;
            f += gamma_logpdf(theta.signal_variance, p.v_shape, p.v_scale).ok()?;
            // d/d(log x) of the gamma log density
            g[0] += p.l_shape - T::one() - theta.lengthscale / p.l_scale;
            g[1] += p.v_shape - T::one() - theta.signal_variance / p.v_scale;
        }
        (f.is_finite() && g[0].is_finite() && g[1].is_finite()).then_some((f, g))
    }
}

/// Projected gradient ascent with Armijo backtracking.
fn ascend<T: Real>(
    obj: &Objective<'_, T>,
    start: [T; 2],
    bounds: &FitBounds<T>,
    opts: &FitOptions<T>,
) -> Option<([T; 2], T, Vec<T>)> {
    let mut x = bounds.clamp(start);
    let (mut f, mut g) = obj.eval(x)?;
    let mut trace = vec![f];
    let mut step = T::one();
    let armijo = T::lit(1e-4);
    let min_step = T::lit(1e-14);
    for _ in 0..opts.max_iters {
        let mut accepted = None;
        while step > min_step {
            let cand = bounds.clamp([x[0] + step * g[0], x[1] + step * g[1]]);
            let dx = [cand[0] - x[0], cand[1] - x[1]];
            let decrease = g[0] * dx[0] + g[1] * dx[1];
            if dx[0] == T::zero() && dx[1] == T::zero() {
                break;
            }
            if let Some((fc, gc)) = obj.eval(cand) {
                if fc >= f + armijo * decrease {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let improvement = fn_ - f;
        let moved = ((xn[0] - x[0]).powi(2) + (xn[1] - x[1]).powi(2)).sqrt();
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        step = (step * T::lit(2.0)).min(T::lit(1e3));
        if improvement <= opts.tolerance * (T::one() + f.abs()) && moved < T::lit(1e-6) {
            break;
        }
    }
    Some((x, f, trace))
}

/// Multi-start fit of a single `(l, σ_r²)` shared across `datasets`, maximising the
/// summed log marginal likelihood plus the optional gamma prior log density.
pub fn fit_hyperparams<T: Real, R: Rng + ?Sized>(
    datasets: &[&Dataset<T>],
    prior: Option<&HyperPrior<T>>,
    opts: &FitOptions<T>,
    rng: &mut R,
) -> Result<(HyperParams<T>, FitTrace<T>), GpError> {
    if opts.restarts == 0 {
        return Err(GpError::FitFailed("restarts must be at least 1".into()));
    }
    let bounds = FitBounds::from_datasets(datasets);
    let obj = Objective {
        datasets,
        prior,
        noise: opts.noise_variance,
    };
    let mut best: Option<([T; 2], T)> = None;
    let mut trace = FitTrace::default();
    for _ in 0..opts.restarts {
        let (ul, uv): (f64, f64) = (rng.random(), rng.random());
        let start = [
            lerp(bounds.start_log_l, T::lit(ul)),
            lerp(bounds.start_log_v, T::lit(uv)),
        ];
        if let Some((x, f, t)) = ascend(&obj, start, &bounds, opts) {
            trace.restarts.push(t);
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((x, f));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| GpError::FitFailed("every restart had an undefined likelihood".into()))?;
    Ok((HyperParams::from_log(x[0], x[1], opts.noise_variance), trace))
}

fn lerp<T: Real>(range: (T, T), u: T) -> T {
    range.0 + (range.1 - range.0) * u
}

/// MAP (or maximum-likelihood, without a prior) hyperparameters for one dataset.
pub fn fit_map<T: Real, R: Rng + ?Sized>(
    data: &Dataset<T>,
    prior: Option<&HyperPrior<T>>,
    opts: &FitOptions<T>,
    rng: &mut R,
) -> Result<HyperParams<T>, GpError> {
    fit_map_traced(data, prior, opts, rng).map(|(hp, _)| hp)
}

pub fn fit_map_traced<T: Real, R: Rng + ?Sized>(
    data: &Dataset<T>,
    prior: Option<&HyperPrior<T>>,
    opts: &FitOptions<T>,
    rng: &mut R,
) -> Result<(HyperParams<T>, FitTrace<T>), GpError> {
    if data.len() < 2 {
        return Err(GpError::FitFailed(format!(
            "need at least 2 observations, got {}",
            data.len()
        )));
    }
    fit_hyperparams(&[data], prior, opts, rng)
}

