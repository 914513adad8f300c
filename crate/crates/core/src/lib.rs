//! Nonparametric maximum likelihood estimation of convex hazard rates.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod active_set;
pub mod asymptotics;
pub mod characterization;
pub mod empirical;
pub mod envelope;
pub mod error;
pub mod harness;
pub mod hazard;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod stats;

pub use characterization::{check, touchpoints, CharacterizationReport};
pub use empirical::{Direction, LifetimeSample, TiePolicy};
pub use envelope::{
    compute_envelope, quantile_table, EnvelopeFit, PathGrid, QuantileTable, TableConfig,
};
pub use error::{Error, Result};
pub use harness::{
    run as run_experiment, Experiment, ExperimentKind, ExperimentSpec, ExperimentSummary, Truth,
    TruthSpec,
};
pub use hazard::{HsDistribution, Knot, PiecewiseLinearHazard};
pub use solver::{fit, FitResult, SolverConfig};
