//! Doping-profile optimization for the nonlinear nonlocal Poisson equation of
//! a semiconductor in thermal equilibrium, together with its quasi-neutral
//! (zero space charge) limit.
//!
//! All fields are nodal values of continuous piecewise-linear functions on a
//! uniform 1D mesh, stored as plain `Vec<f64>`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod doping;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod objective;
pub mod optimize;
pub mod parallel;
pub mod state;
pub mod verify;

pub use adjoint::{solve_adjoint, AdjointOptions, AdjointSolution, TrackingTargets};
pub use doping::{ChargeTotals, DopingProfile};
pub use error::{Error, Result};
pub use experiments::{canonical_profile, run_sweep, ExperimentSpec, SweepRow};
pub use fem::{assemble, AssembledForms, Mesh1D};
pub use objective::{CostBreakdown, Evaluation, GradientField, ReducedProblem, TotalsMode};
pub use optimize::{optimize, OptRun, OptimizeError, OptimizerConfig, SignConvention};
pub use parallel::Execution;
pub use state::{solve_state, solve_state_lambda, solve_state_zero, StateOptions, StateSolution};
