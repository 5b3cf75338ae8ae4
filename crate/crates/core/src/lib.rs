//! Optimal single-qubit control under wide-sense-stationary control noise.
//!
//! Noise on the control amplitude (and, optionally, dephasing) is described by
//! ARMA processes. The first-order Magnus error vector turns the expected gate
//! infidelity into a quadratic form in the per-step rotation angles, so the
//! pure control-noise problem is a convex, equality-constrained QP with a
//! closed-form KKT solution. With dephasing the objective becomes nonconvex
//! and is handled by projected gradient descent seeded from forward/reverse
//! length sweeps.
//!
//! Every analytic formula has an independent check: a dense quadratic-form
//! oracle, an exact piecewise-constant SU(2) Monte Carlo simulator, and
//! closed-form second-order bounds.
//!
//! Data-parallel loops (trajectories, parameter grids, sweeps) run on rayon
//! when the `parallel` feature is enabled; [`Execution::Sequential`] selects
//! the serial path at runtime and produces bit-identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod arma;
pub mod bounds;
pub mod composite;
pub mod control;
mod error;
mod exec;
pub mod montecarlo;
pub mod optimizer;
mod sum;

pub use error::{Error, Result};
pub use exec::Execution;
pub use sum::NeumaierSum;
