//! Optimal individualized treatment regimes under unmeasured confounding,
//! learned from a treatment-inducing proxy Z and an outcome-inducing proxy W.
//!
//! The pipeline estimates an outcome bridge h and a treatment bridge q by
//! kernel moment-restriction risks, learns linear regimes on (X, Z) and
//! (X, W) by weighted hinge classification, and combines them with a
//! covariate-dependent switch estimated by Nadaraya-Watson regression.

pub mod arm;
pub mod bridge;
pub mod combine;
pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod regime;
pub mod rng;
pub mod stats;

pub use arm::Arm;
pub use bridge::{fit_bridges, BridgeFn, BridgeSettings, Bridges, FittedBridges, Link, MmrProblem, Statistic, Target};
pub use combine::{
    combine, estimate_delta, identified_value, make_pi_hat, scott_bandwidth, union_select, Bandwidth, PiEstimator,
};
pub use config::{load_scenario, ScenarioConfig, Tuning};
pub use data::{Dataset, Observation, TestRow, TestSet};
pub use dgp::{
    empirical_value, oracle_dw_star, oracle_dz_star, sample_testing, sample_training, true_h, true_q, TestLaw,
};
pub use error::{Error, Result};
pub use harness::{
    consistency_sweep, excess_value_decomposition, fit_pipeline, run_experiment, run_replication, FittedPipeline,
    RunOptions, ValueReport,
};
pub use policy::{learn_dw, learn_dz, solve_weighted_hinge, LearnedRegime, Side};
pub use regime::{Regime, Switch};
pub use stats::Estimate;
