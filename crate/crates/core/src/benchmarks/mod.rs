//! Discretised optimisation tasks: synthetic hierarchical GP suites and grid files.

mod io;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{gram, Dataset, GpError, HyperParams, PointSet, DEFAULT_NOISE_VARIANCE};
use crate::numerics::{cholesky_default, NumericsError};
use crate::prior::HyperPrior;
use crate::seeding;

pub use io::{load_grid_csv, parse_grid_csv, write_grid_csv, format_grid_csv, Suite, SuiteManifest, TaskEntry, TaskRole};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("task '{0}' has no finite values")]
    EmptyTask(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("task '{0}' is degenerate (standard deviation below 1e-12)")]
    DegenerateTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Rectangular lattice geometry: cell `(r, c)` sits at `(x0 + c·dx, y0 + r·dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub rows: usize,
    pub cols: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Lattice {
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn point(&self, cell: usize) -> [f64; 2] {
        let (r, c) = (cell / self.cols, cell % self.cols);
        [self.x0 + c as f64 * self.dx, self.y0 + r as f64 * self.dy]
    }

    /// `side × side` lattice spanning the box `[lo, hi]`.
    pub fn square(side: usize, lo: [f64; 2], hi: [f64; 2]) -> Self {
        let step = |a: f64, b: f64| if side > 1 { (b - a) / (side - 1) as f64 } else { 0.0 };
        Self {
            rows: side,
            cols: side,
            x0: lo[0],
            y0: lo[1],
            dx: step(lo[0], hi[0]),
            dy: step(lo[1], hi[1]),
        }
    }
}

/// A discretised task. Missing lattice cells are excluded from `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTask {
    pub name: String,
    grid: PointSet<f64>,
    values: Vec<f64>,
    y_max: f64,
    pub true_theta: Option<HyperParams<f64>>,
    start_indices: Vec<usize>,
    lattice: Lattice,
    /// Lattice cell of every retained grid point.
    cells: Vec<usize>,
    log_applied: bool,
}

impl GridTask {
    /// Builds from the lattice cell values; non-finite cells are treated as missing.
    pub fn from_lattice(name: impl Into<String>, lattice: Lattice, cell_values: &[f64]) -> Result<Self, BenchmarkError> {
        let name = name.into();
        if cell_values.len() != lattice.n_cells() {
            return Err(BenchmarkError::InvalidConfig(format!(
                "expected {} cell values, got {}",
                lattice.n_cells(),
                cell_values.len()
            )));
        }
        let mut grid = PointSet::new(2);
        let mut values = Vec::new();
        let mut cells = Vec::new();
        for (cell, &v) in cell_values.iter().enumerate() {
            if v.is_finite() {
                grid.push(&lattice.point(cell))?;
                values.push(v);
                cells.push(cell);
            }
        }
        let y_max = values
            .iter()
            .copied()
            .reduce(f64::max)
            .ok_or_else(|| BenchmarkError::EmptyTask(name.clone()))?;
        Ok(Self {
            name,
            grid,
            values,
            y_max,
            true_theta: None,
            start_indices: Vec::new(),
            lattice,
            cells,
            log_applied: false,
        })
    }

    pub fn grid(&self) -> &PointSet<f64> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn log_applied(&self) -> bool {
        self.log_applied
    }

    pub fn start_indices(&self) -> &[usize] {
        &self.start_indices
    }

    pub fn set_start_indices(&mut self, indices: Vec<usize>) -> Result<(), BenchmarkError> {
        let mut seen = vec![false; self.len()];
        for &i in &indices {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(BenchmarkError::InvalidConfig(format!(
                    "start index {i} out of range or repeated for task '{}'",
                    self.name
                )));
            }
        }
        self.start_indices = indices;
        Ok(())
    }

    pub fn with_start_indices(mut self, indices: Vec<usize>) -> Result<Self, BenchmarkError> {
        self.set_start_indices(indices)?;
        Ok(self)
    }

    /// Observations at the given grid indices.
    pub fn dataset_at(&self, indices: &[usize]) -> Dataset<f64> {
        let inputs = self.grid.select(indices);
        let targets = indices.iter().map(|&i| self.values[i]).collect();
        Dataset::new(inputs, targets).expect("aligned by construction")
    }

    /// Observations at the start (or, for tuning tasks, observed) indices.
    pub fn start_dataset(&self) -> Dataset<f64> {
        self.dataset_at(&self.start_indices)
    }

    /// Full lattice with `NaN` in missing cells.
    pub fn cell_values(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.lattice.n_cells()];
        for (&c, &v) in self.cells.iter().zip(&self.values) {
            out[c] = v;
        }
        out
    }

    fn replace_values(&mut self, values: Vec<f64>) {
        self.y_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.values = values;
    }
}

/// Synthetic suite parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_tuning: usize,
    pub n_test: usize,
    pub tuning_evals: usize,
    pub n_start: usize,
    pub grid_side: usize,
    pub domain_lo: [f64; 2],
    pub domain_hi: [f64; 2],
    /// Generating gamma shape/scale for `l` and `σ_r²`.
    pub prior: HyperPrior,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_tuning: 10,
            n_test: 100,
            tuning_evals: 20,
            n_start: 10,
            grid_side: 32,
            domain_lo: [0.0, 0.0],
            domain_hi: [1.0, 1.0],
            prior: HyperPrior::SYNTHETIC,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let cells = self.grid_side * self.grid_side;
        let fail = |m: String| Err(BenchmarkError::InvalidConfig(m));
        if self.grid_side < 2 {
            return fail("grid_side must be at least 2".into());
        }
        if self.n_tuning == 0 || self.tuning_evals == 0 {
            return fail("n_tuning and tuning_evals must be positive".into());
        }
        if self.tuning_evals > cells || self.n_start > cells {
            return fail(format!("tuning_evals and n_start must not exceed {cells} grid cells"));
        }
        if !(self.noise_variance >= 0.0) {
            return fail("noise_variance must be non-negative".into());
        }
        HyperPrior::new(self.prior.l_shape, self.prior.l_scale, self.prior.v_shape, self.prior.v_scale)
            .map_err(|e| BenchmarkError::InvalidConfig(e.to_string()))?;
        if self.domain_hi[0] <= self.domain_lo[0] || self.domain_hi[1] <= self.domain_lo[1] {
            return fail("domain box must have positive extent".into());
        }
        Ok(())
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::square(self.grid_side, self.domain_lo, self.domain_hi)
    }
}

/// One draw from `N(0, K)` with `K = gram(grid, θ)`.
pub fn sample_gp_on_grid<R: Rng + ?Sized>(
    theta: &HyperParams<f64>,
    grid: &PointSet<f64>,
    rng: &mut R,
) -> Result<Vec<f64>, BenchmarkError> {
    theta.validate()?;
    if grid.is_empty() {
        return Err(BenchmarkError::InvalidConfig("empty grid".into()));
    }
    let factor = cholesky_default(&gram(grid, theta))?;
    let z: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(rng)).collect();
    let l = factor.lower();
    Ok((0..grid.len())
        .map(|i| l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect())
}

/// Generated synthetic suite. Tuning tasks carry their observed indices as start indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub config: SuiteConfig,
    pub tuning: Vec<GridTask>,
    pub test: Vec<GridTask>,
}

impl SyntheticSuite {
    pub fn tuning_datasets(&self) -> Vec<Dataset<f64>> {
        self.tuning.iter().map(GridTask::start_dataset).collect()
    }

    pub fn tuning_true_thetas(&self) -> Vec<HyperParams<f64>> {
        self.tuning.iter().filter_map(|t| t.true_theta).collect()
    }
}

const ROLE_TUNING: u64 = 1;
const ROLE_TEST: u64 = 2;

fn generate_task(cfg: &SuiteConfig, role: u64, index: usize, n_obs: usize) -> Result<GridTask, BenchmarkError> {
    let mut rng = seeding::stream(cfg.seed, &[role, index as u64]);
    let p = &cfg.prior;
    let draw = |shape: f64, scale: f64, rng: &mut seeding::RunRng| -> Result<f64, BenchmarkError> {
        Gamma::new(shape, scale)
            .map(|g| g.sample(rng))
            .map_err(|e| BenchmarkError::InvalidConfig(e.to_string()))
    };
    let l = draw(p.l_shape, p.l_scale, &mut rng)?.max(f64::MIN_POSITIVE);
    let v = draw(p.v_shape, p.v_scale, &mut rng)?.max(f64::MIN_POSITIVE);
    let theta = HyperParams::new(l, v, cfg.noise_variance)?;
    let lattice = cfg.lattice();
    let grid = PointSet::from_flat(2, (0..lattice.n_cells()).flat_map(|c| lattice.point(c)).collect())?;
    let values = sample_gp_on_grid(&theta, &grid, &mut rng)?;
    let prefix = if role == ROLE_TUNING { "tuning" } else { "test" };
    let mut task = GridTask::from_lattice(format!("{prefix}_{index:03}"), lattice, &values)?;
    task.true_theta = Some(theta);
    let idx = sample_indices(&mut rng, task.len(), n_obs).into_vec();
    task.set_start_indices(idx)?;
    Ok(task)
}

/// Draws every task's `θ` from the configured gammas and a GP surface on the lattice.
/// Each task uses its own RNG stream derived from `(seed, role, index)`.
pub fn generate_suite(cfg: &SuiteConfig) -> Result<SyntheticSuite, BenchmarkError> {
    use rayon::prelude::*;
    cfg.validate()?;
    let tuning = (0..cfg.n_tuning)
        .into_par_iter()
        .map(|i| generate_task(cfg, ROLE_TUNING, i, cfg.tuning_evals))
        .collect::<Result<Vec<_>, _>>()?;
    let test = (0..cfg.n_test)
        .into_par_iter()
        .map(|i| generate_task(cfg, ROLE_TEST, i, cfg.n_start))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticSuite {
        config: cfg.clone(),
        tuning,
        test,
    })
}

/// Log transform (once) and per-task standardisation.
pub fn preprocess_pollution(task: &GridTask) -> Result<GridTask, BenchmarkError> {
    let mut out = task.clone();
    let mut vals = task.values.clone();
    if !task.log_applied {
        if let Some(bad) = vals.iter().find(|&&v| !(v > 0.0)) {
            return Err(BenchmarkError::Domain(format!(
                "log transform needs positive values, task '{}' has {bad}",
                task.name
            )));
        }
        vals.iter_mut().for_each(|v| *v = v.ln());
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std >= 1e-12) {
        return Err(BenchmarkError::DegenerateTask(task.name.clone()));
    }
    vals.iter_mut().for_each(|v| *v = (*v - mean) / std);
    out.replace_values(vals);
    out.log_applied = true;
    Ok(out)
}

#[cfg(test)]
mod tests;
