//! Zero-mean Gaussian-process regression with an isotropic RBF kernel.
//!
//! The kernel is `σ_r² exp(-|τ|² / 2l²)` with a fixed observation noise `σ_n²` added on
//! the diagonal. Everything here is generic over [`Real`] so the same code serves `f32`
//! and `f64` callers.

mod fit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{cholesky_default, log_det, CholeskyFactor, NumericsError, SquareMatrix};
use crate::scalar::Real;

pub use fit::{fit_hyperparams, fit_map, fit_map_traced, FitBounds, FitOptions, FitTrace};

/// Default fixed observation noise variance.
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("likelihood undefined: {0}")]
    LikelihoodUndefined(#[from] NumericsError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hyperparameter fit failed: {0}")]
    FitFailed(String),
}

/// Kernel hyperparameters of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    pub lengthscale: T,
    pub signal_variance: T,
    pub noise_variance: T,
}

impl<T: Real> HyperParams<T> {
    pub fn new(lengthscale: T, signal_variance: T, noise_variance: T) -> Result<Self, GpError> {
        let hp = Self {
            lengthscale,
            signal_variance,
            noise_variance,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = self.lengthscale.is_finite()
            && self.signal_variance.is_finite()
            && self.noise_variance.is_finite()
            && self.lengthscale > T::zero()
            && self.signal_variance > T::zero()
            && self.noise_variance >= T::zero();
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidHyperParams(format!(
                "l={}, sigma_r^2={}, sigma_n^2={}",
                self.lengthscale, self.signal_variance, self.noise_variance
            )))
        }
    }

    /// Builds from log-lengthscale and log-signal-variance.
    pub fn from_log(log_l: T, log_v: T, noise_variance: T) -> Self {
        Self {
            lengthscale: log_l.exp(),
            signal_variance: log_v.exp(),
            noise_variance,
        }
    }

    pub fn log_coords(&self) -> [T; 2] {
        [self.lengthscale.ln(), self.signal_variance.ln()]
    }

    /// Prior variance of an observation: `σ_r² + σ_n²`.
    pub fn total_variance(&self) -> T {
        self.signal_variance + self.noise_variance
    }
}

/// A list of points of equal dimension stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Real> PointSet<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn from_flat(dim: usize, coords: Vec<T>) -> Result<Self, GpError> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(GpError::DimensionMismatch {
                expected: dim,
                got: coords.len(),
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(dim: usize, points: &[Vec<T>]) -> Result<Self, GpError> {
        let mut set = Self::new(dim);
        for p in points {
            set.push(p)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, p: &[T]) -> Result<(), GpError> {
        if p.len() != self.dim {
            return Err(GpError::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        self.coords.extend_from_slice(p);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.coords
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &i in indices {
            out.coords.extend_from_slice(self.point(i));
        }
        out
    }

    /// Smallest non-zero and largest pairwise Euclidean distance.
    pub fn distance_range(&self) -> Option<(T, T)> {
        let n = self.len();
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                let d = squared_distance(self.point(i), self.point(j)).sqrt();
                if d > T::zero() {
                    lo = lo.min(d);
                }
                hi = hi.max(d);
            }
        }
        (hi > T::zero()).then_some((lo, hi))
    }
}

/// Observed inputs and outputs of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    inputs: PointSet<T>,
    targets: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: PointSet<T>, targets: Vec<T>) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            inputs: PointSet::new(dim),
            targets: Vec::new(),
        }
    }

    pub fn from_points(dim: usize, points: &[Vec<T>], targets: Vec<T>) -> Result<Self, GpError> {
        Self::new(PointSet::from_points(dim, points)?, targets)
    }

    pub fn push(&mut self, x: &[T], y: T) -> Result<(), GpError> {
        self.inputs.push(x)?;
        self.targets.push(y);
        Ok(())
    }

    pub fn inputs(&self) -> &PointSet<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Concatenation of several datasets of equal dimension.
    pub fn union<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Dataset<T>>) -> Result<Self, GpError> {
        let mut out = Self::empty(dim);
        for part in parts {
            for (x, &y) in part.inputs.iter().zip(&part.targets) {
                out.push(x, y)?;
            }
        }
        Ok(out)
    }

    pub fn max_target(&self) -> Option<T> {
        self.targets.iter().copied().reduce(T::max)
    }
}

/// Pointwise predictive moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

impl<T: Real> Prediction<T> {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_dev(&self) -> impl Iterator<Item = T> + '_ {
        self.variance.iter().map(|v| v.sqrt())
    }
}

#[inline]
pub(crate) fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum()
}

/// RBF covariance for an input difference `τ`.
pub fn rbf_kernel<T: Real>(tau: &[T], theta: &HyperParams<T>) -> T {
    let r2: T = tau.iter().map(|&t| t * t).sum();
    rbf_from_sq(r2, theta)
}

#[inline]
fn rbf_from_sq<T: Real>(r2: T, theta: &HyperParams<T>) -> T {
    let l = theta.lengthscale;
    theta.signal_variance * (-r2 / (T::lit(2.0) * l * l)).exp()
}

/// Gram matrix `K_ij = k(x_i - x_j) + σ_n² [i = j]`.
pub fn gram<T: Real>(inputs: &PointSet<T>, theta: &HyperParams<T>) -> SquareMatrix<T> {
    let n = inputs.len();
    let mut k = SquareMatrix::zeros(n);
    for i in 0..n {
        k[(i, i)] = theta.signal_variance + theta.noise_variance;
        for j in 0..i {
            let v = rbf_from_sq(squared_distance(inputs.point(i), inputs.point(j)), theta);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cached conditioning of a GP on a dataset: Cholesky factor of the Gram matrix and
/// `α = K⁻¹y`. Reused for likelihood and predictions under the same hyperparameters.
#[derive(Debug, Clone)]
pub struct GpPosterior<'a, T> {
    data: &'a Dataset<T>,
    theta: HyperParams<T>,
    factor: Option<CholeskyFactor<T>>,
    alpha: Vec<T>,
}

impl<'a, T: Real> GpPosterior<'a, T> {
    pub fn condition(data: &'a Dataset<T>, theta: &HyperParams<T>) -> Result<Self, GpError> {
        theta.validate()?;
        if data.is_empty() {
            return Ok(Self {
                data,
                theta: *theta,
                factor: None,
                alpha: Vec::new(),
            });
        }
        let factor = cholesky_default(&gram(data.inputs(), theta))?;
        let mut alpha = data.targets().to_vec();
        factor.solve_lower_in_place(&mut alpha);
        factor.solve_upper_in_place(&mut alpha);
        Ok(Self {
            data,
            theta: *theta,
            factor: Some(factor),
            alpha,
        })
    }

    pub fn theta(&self) -> &HyperParams<T> {
        &self.theta
    }

    pub fn factor(&self) -> Option<&CholeskyFactor<T>> {
        self.factor.as_ref()
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    /// `-½ yᵀK⁻¹y - ½ log|K| - (n/2) log 2π`; zero for an empty dataset.
    pub fn log_marginal_likelihood(&self) -> T {
        let Some(f) = &self.factor else {
            return T::zero();
        };
        let half = T::lit(0.5);
        let n = T::from_usize(self.data.len()).unwrap();
        let fit: T = self
            .alpha
            .iter()
            .zip(self.data.targets())
            .map(|(&a, &y)| a * y)
            .sum();
        -half * fit - half * log_det(f) - half * n * T::TAU().ln()
    }

    /// Predictive mean and variance at each query point.
    pub fn predict(&self, queries: &PointSet<T>, include_noise: bool) -> Result<Prediction<T>, GpError> {
        if queries.dim() != self.data.dim() && !self.data.is_empty() {
            return Err(GpError::DimensionMismatch {
                expected: self.data.dim(),
                got: queries.dim(),
            });
        }
        let noise = if include_noise {
            self.theta.noise_variance
        } else {
            T::zero()
        };
        let m = queries.len();
        let mut mean = Vec::with_capacity(m);
        let mut variance = Vec::with_capacity(m);
        let Some(f) = &self.factor else {
            mean.resize(m, T::zero());
            variance.resize(m, self.theta.signal_variance + noise);
            return Ok(Prediction { mean, variance });
        };
        let inputs = self.data.inputs();
        let n = inputs.len();
        let mut kstar = vec![T::zero(); n];
        for q in queries.iter() {
            for (i, k) in kstar.iter_mut().enumerate() {
                *k = rbf_from_sq(squared_distance(q, inputs.point(i)), &self.theta);
            }
            let mu: T = kstar.iter().zip(&self.alpha).map(|(&k, &a)| k * a).sum();
            f.solve_lower_in_place(&mut kstar);
            let explained: T = kstar.iter().map(|&v| v * v).sum();
            let var = (self.theta.signal_variance - explained).max(T::zero()) + noise;
            mean.push(mu);
            variance.push(var);
        }
        Ok(Prediction { mean, variance })
    }
}

/// Log marginal likelihood of `data` under `theta`.
pub fn log_marginal_likelihood<T: Real>(data: &Dataset<T>, theta: &HyperParams<T>) -> Result<T, GpError> {
    Ok(GpPosterior::condition(data, theta)?.log_marginal_likelihood())
}

/// Gradient of the log marginal likelihood with respect to `(log l, log σ_r²)`.
pub fn lml_gradient<T: Real>(data: &Dataset<T>, theta: &HyperParams<T>) -> Result<[T; 2], GpError> {
    Ok(lml_with_gradient(data, theta)?.1)
}

/// Log marginal likelihood together with its log-space gradient.
pub fn lml_with_gradient<T: Real>(data: &Dataset<T>, theta: &HyperParams<T>) -> Result<(T, [T; 2]), GpError> {
    let post = GpPosterior::condition(data, theta)?;
    let lml = post.log_marginal_likelihood();
    let Some(f) = post.factor() else {
        return Ok((lml, [T::zero(); 2]));
    };
    let k_inv = f.inverse();
    let alpha = post.alpha();
    let inputs = data.inputs();
    let n = inputs.len();
    let l2 = theta.lengthscale * theta.lengthscale;
    let half = T::lit(0.5);
    let mut g_l = T::zero();
    let mut g_v = T::zero();
    for i in 0..n {
        for j in 0..n {
            let r2 = if i == j {
                T::zero()
            } else {
                squared_distance(inputs.point(i), inputs.point(j))
            };
            let k = rbf_from_sq(r2, theta);
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            g_l += w * k * r2 / l2;
            g_v += w * k;
        }
    }
    Ok((lml, [half * g_l, half * g_v]))
}

/// Predictive moments at `queries`; for an empty dataset the GP prior is returned.
pub fn posterior_predictive<T: Real>(
    data: &Dataset<T>,
    theta: &HyperParams<T>,
    queries: &PointSet<T>,
    include_noise: bool,
) -> Result<Prediction<T>, GpError> {
    GpPosterior::condition(data, theta)?.predict(queries, include_noise)
}
