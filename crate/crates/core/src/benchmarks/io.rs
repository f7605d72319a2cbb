//! Grid task CSV files and suite manifests.
//!
//! Grid file layout:
//!
//! ```text
//! # name=<id>
//! # rows=<R> cols=<C> x0=<f> y0=<f> dx=<f> dy=<f>
//! v,v,...,v        (R lines of C values, `nan` marks a missing cell)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchmarkError, GridTask, Lattice, SuiteConfig, SyntheticSuite};
use crate::gp::{Dataset, HyperParams, DEFAULT_NOISE_VARIANCE};
use crate::prior::HyperPrior;

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> BenchmarkError {
    BenchmarkError::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".to_string()
    }
}

/// Renders a task in the grid CSV format.
pub fn format_grid_csv(task: &GridTask) -> String {
    let lat = task.lattice();
    let mut out = String::new();
    let _ = writeln!(out, "# name={}", task.name);
    let _ = writeln!(
        out,
        "# rows={} cols={} x0={} y0={} dx={} dy={}",
        lat.rows, lat.cols, lat.x0, lat.y0, lat.dx, lat.dy
    );
    let cells = task.cell_values();
    for row in cells.chunks(lat.cols) {
        let line: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_grid_csv(task: &GridTask, path: &Path) -> Result<(), BenchmarkError> {
    fs::write(path, format_grid_csv(task)).map_err(|source| BenchmarkError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_grid_csv(path: &Path) -> Result<GridTask, BenchmarkError> {
    let text = fs::read_to_string(path).map_err(|source| BenchmarkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_grid_csv(&text)
}

fn header_fields(line: &str, lineno: usize) -> Result<Vec<(String, String)>, BenchmarkError> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(lineno, 1, "expected a '#' header line"))?;
    body.split_whitespace()
        .enumerate()
        .map(|(i, kv)| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| parse_err(lineno, i + 1, format!("expected key=value, got '{kv}'")))
        })
        .collect()
}

pub fn parse_grid_csv(text: &str) -> Result<GridTask, BenchmarkError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n1, l1) = lines.next().ok_or_else(|| parse_err(1, 1, "empty file"))?;
    let name = l1
        .strip_prefix("# name=")
        .ok_or_else(|| parse_err(n1, 1, "expected '# name=<id>'"))?
        .to_string();
    let (n2, l2) = lines.next().ok_or_else(|| parse_err(2, 1, "missing geometry header"))?;
    let fields = header_fields(l2, n2)?;
    let get = |key: &str| -> Result<&str, BenchmarkError> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| parse_err(n2, 1, format!("missing '{key}'")))
    };
    let usize_of = |key: &str| -> Result<usize, BenchmarkError> {
        get(key)?
            .parse()
            .map_err(|_| parse_err(n2, 1, format!("'{key}' is not an integer")))
    };
    let f64_of = |key: &str| -> Result<f64, BenchmarkError> {
        get(key)?
            .parse()
            .map_err(|_| parse_err(n2, 1, format!("'{key}' is not a number")))
    };
    let lattice = Lattice {
        rows: usize_of("rows")?,
        cols: usize_of("cols")?,
        x0: f64_of("x0")?,
        y0: f64_of("y0")?,
        dx: f64_of("dx")?,
        dy: f64_of("dy")?,
    };
    if lattice.rows == 0 || lattice.cols == 0 {
        return Err(parse_err(n2, 1, "rows and cols must be positive"));
    }
    let mut cells = Vec::with_capacity(lattice.n_cells());
    let mut rows_read = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == lattice.rows {
            return Err(parse_err(lineno, 1, "more data rows than declared"));
        }
        let mut cols_read = 0;
        for (c, field) in line.split(',').enumerate() {
            let field = field.trim();
            let v = if field.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(lineno, c + 1, format!("invalid number '{field}'")))?
            };
            cells.push(v);
            cols_read += 1;
        }
        if cols_read != lattice.cols {
            return Err(parse_err(
                lineno,
                cols_read.min(lattice.cols) + 1,
                format!("expected {} values, found {cols_read}", lattice.cols),
            ));
        }
        rows_read += 1;
    }
    if rows_read != lattice.rows {
        return Err(parse_err(
            text.lines().count() + 1,
            1,
            format!("expected {} data rows, found {rows_read}", lattice.rows),
        ));
    }
    GridTask::from_lattice(name, lattice, &cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskRole {
    Tuning,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub l: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub name: String,
    /// Path relative to the manifest's directory.
    pub file: String,
    pub role: TaskRole,
    /// Test tasks: pre-evaluated start points. Tuning tasks: observed evaluations
    /// (all retained cells when empty).
    #[serde(default)]
    pub start_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_theta: Option<ThetaRecord>,
    /// Apply log transform and standardisation on load.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub preprocess: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_eta: Option<HyperPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SuiteConfig>,
    pub tasks: Vec<TaskEntry>,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_VARIANCE
}

impl SuiteManifest {
    pub fn to_json(&self) -> Result<String, BenchmarkError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BenchmarkError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Tasks loaded through a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub manifest: SuiteManifest,
    pub tuning: Vec<GridTask>,
    pub test: Vec<GridTask>,
}

impl Suite {
    pub fn load(manifest_path: &Path) -> Result<Self, BenchmarkError> {
        let text = fs::read_to_string(manifest_path).map_err(|source| BenchmarkError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest = SuiteManifest::from_json(&text)?;
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut tuning = Vec::new();
        let mut test = Vec::new();
        for entry in &manifest.tasks {
            let mut task = load_grid_csv(&base.join(&entry.file))?;
            if entry.preprocess {
                task = super::preprocess_pollution(&task)?;
            }
            task.name = entry.name.clone();
            task.true_theta = entry
                .true_theta
                .map(|t| HyperParams::new(t.l, t.v, manifest.noise_variance))
                .transpose()?;
            let starts = match (entry.role, entry.start_indices.is_empty()) {
                (TaskRole::Tuning, true) => (0..task.len()).collect(),
                _ => entry.start_indices.clone(),
            };
            task.set_start_indices(starts)?;
            match entry.role {
                TaskRole::Tuning => tuning.push(task),
                TaskRole::Test => test.push(task),
            }
        }
        Ok(Self { manifest, tuning, test })
    }

    pub fn tuning_datasets(&self) -> Vec<Dataset<f64>> {
        self.tuning.iter().map(GridTask::start_dataset).collect()
    }

    pub fn noise_variance(&self) -> f64 {
        self.manifest.noise_variance
    }
}

impl SyntheticSuite {
    pub fn manifest(&self) -> SuiteManifest {
        let entry = |task: &GridTask, role: TaskRole| TaskEntry {
            name: task.name.clone(),
            file: format!("{}.csv", task.name),
            role,
            start_indices: task.start_indices().to_vec(),
            true_theta: task.true_theta.map(|t| ThetaRecord {
                l: t.lengthscale,
                v: t.signal_variance,
            }),
            preprocess: false,
        };
        SuiteManifest {
            seed: Some(self.config.seed),
            noise_variance: self.config.noise_variance,
            true_eta: Some(self.config.prior),
            generator: Some(self.config.clone()),
            tasks: self
                .tuning
                .iter()
                .map(|t| entry(t, TaskRole::Tuning))
                .chain(self.test.iter().map(|t| entry(t, TaskRole::Test)))
                .collect(),
        }
    }

    /// Writes every task CSV plus `manifest.json` into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, BenchmarkError> {
        let io_err = |path: &Path| {
            let p = path.display().to_string();
            move |source| BenchmarkError::Io { path: p, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for task in self.tuning.iter().chain(&self.test) {
            write_grid_csv(task, &dir.join(format!("{}.csv", task.name)))?;
        }
        let path = dir.join("manifest.json");
        fs::write(&path, self.manifest().to_json()?).map_err(io_err(&path))?;
        Ok(path)
    }
}
