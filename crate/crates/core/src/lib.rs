//! Transfer Bayesian optimisation by learning a hierarchical prior over Gaussian-process
//! hyperparameters.
//!
//! Past ("tuning") tasks are used to infer gamma hyperpriors over the RBF lengthscale
//! and signal variance by MCMC. New tasks are then optimised with an acquisition
//! averaged over hyperparameter candidates drawn from that prior, each weighted by its
//! marginal likelihood on the new task's data.
//!
//! The numeric layers ([`numerics`], [`gp`], [`acquisition`]) are generic over
//! [`Real`]; the aliases below fix the scalar for the common cases.

pub mod acquisition;
pub mod benchmarks;
pub mod cli;
pub mod gp;
pub mod numerics;
pub mod prior;
pub mod runner;
pub mod scalar;
pub mod seeding;
pub mod strategies;

pub use scalar::Real;

pub type SquareMatrix = numerics::SquareMatrix<f64>;
pub type CholeskyFactor = numerics::CholeskyFactor<f64>;
pub type HyperParams = gp::HyperParams<f64>;
pub type Dataset = gp::Dataset<f64>;
pub type PointSet = gp::PointSet<f64>;
pub type Prediction = gp::Prediction<f64>;
pub type HyperPrior = prior::HyperPrior<f64>;
pub type AcquisitionSpec = acquisition::AcquisitionSpec<f64>;

pub type SquareMatrixF32 = numerics::SquareMatrix<f32>;
pub type HyperParamsF32 = gp::HyperParams<f32>;
pub type DatasetF32 = gp::Dataset<f32>;
pub type PointSetF32 = gp::PointSet<f32>;
pub type PredictionF32 = gp::Prediction<f32>;

pub use benchmarks::{GridTask, SuiteConfig};
pub use prior::{CandidateSet, McmcConfig, PosteriorSamples};
pub use runner::{AggregateCurve, RunResult};
pub use strategies::{StrategyConfig, StrategyKind};
