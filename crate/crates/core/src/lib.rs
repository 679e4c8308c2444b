#![no_std]
// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Scalable robust multidisciplinary design optimisation benchmark.
//!
//! `N` linear disciplines are coupled through their outputs and perturbed by
//! centred noise. Because everything is linear, the robust problem reduces to
//! a convex quadratic program whose solution is the exact reference against
//! which sampling and Taylor estimators, run through a multidisciplinary
//! feasible optimisation loop, can be scored.
//!
//! - [`problem`]: configuration, seeded generation, assembly, threshold tuning.
//! - [`mda`]: fixed-point and direct solution of the coupling equations.
//! - [`qp`]: quadratic reductions and an interior-point reference solver.
//! - [`uq`]: Monte-Carlo, first-order Taylor and closed-form statistics.
//! - [`mdf`]: robust objective/constraints and a derivative-free optimiser.

extern crate alloc;

pub mod error;
pub mod mda;
pub mod mdf;
pub mod problem;
pub mod qp;
pub mod rng;
pub mod stats;
pub mod uq;

pub use error::{Error, Result};
pub use mda::{coupling_jacobian, solve_mda, LinearCoupling, MdaMethod, MdaResult, MdaSettings};
pub use mdf::{
    make_robust_functions, percent_errors, run_mdf, Estimator, OptimizerSettings, PercentErrors, RobustFunctions,
    RunResult, SampleRefresh, StopReason,
};
pub use problem::{assemble, generate, BlockSystem, NoiseKind, ProblemConfig, ScalableProblem, UncertaintyModel};
pub use qp::{
    check_positive_definite, reduce_deterministic, reduce_margin, reduce_probability, solve_qp, IpmSettings,
    ProbabilityModel, QpData, QpSolution, QpStatus,
};
pub use uq::{
    exact_stats, mc_estimate, taylor_estimate, ConstraintStatistic, EstimatorKind, GaussianSampler, StatEstimate,
    StatisticSpec,
};
