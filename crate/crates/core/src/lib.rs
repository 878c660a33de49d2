//! Bifidelity rare-event estimation: a control-variate constant computed on a
//! shared importance sample (CVIS), with subset simulation for the LF
//! failure probability, DE-MC sampling of a logistic-smoothed importance
//! density, batch-means uncertainty, comparison estimators and two benchmarks.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod batch_means;
pub mod cvis;
pub mod demc;
pub mod distribution;
pub mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod smoothing;
pub mod subset_simulation;

pub use baselines::{BaselineEstimate, CsEstimate, EstimatorKind};
pub use batch_means::{rbm_variance, BatchMeansConfig, RbmEstimate};
pub use cvis::{run_cvis, CvisOptions, CvisReport, IsMoments, IsdMode};
pub use demc::{ChainEnsemble, DemcConfig, Record};
pub use distribution::{JointInputDistribution, Marginal};
pub use error::{Error, Result};
pub use harness::{Allocation, Benchmark, ExperimentConfig, OracleResult, TrialRow, TrialStats};
pub use models::{indicator, ModelPair, Side};
pub use rng::RngStream;
pub use smoothing::{beta_star, Beta};
pub use subset_simulation::{run_sus, SusConfig, SusResult};
