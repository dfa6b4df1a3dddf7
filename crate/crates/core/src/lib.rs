//! Structure-preserving simulation of the stochastic Nernst–Planck–Navier–Stokes
//! system on a rectangle.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: staggered (MAC) geometry, fields and discrete operators.
//! * [`linalg`]: the five-point operators and the conjugate-gradient solver.
//! * [`poisson`]: the potential solve with Robin/Neumann closure.
//! * [`ions`]: Scharfetter–Gummel Nernst–Planck transport with blocking walls.
//! * [`fluid`]: Navier–Stokes with projection and the Coulomb force.
//! * [`noise`]: the truncated cylindrical Wiener process and noise operator.
//! * [`regularization`]: cut-off, mollifier, truncated tendencies and monitors.
//! * [`state`]: the coupled ion, fluid and potential state.
//! * [`config`]: the TOML run configuration.
//! * [`diagnostics`]: free energy, dissipation, norms and the energy balance.
//! * [`ensemble`]: the time loop, ensembles and statistics.
//! * [`snapshot`]: the binary field format.
//! * [`mms`]: manufactured-solution convergence checks.
//!
//! With the default `parallel` feature, ensembles and large-grid kernels use
//! rayon. Without it every path runs sequentially and produces identical bits.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod fluid;
pub mod grid;
pub mod ions;
pub mod linalg;
pub mod mms;
pub mod noise;
pub mod par;
pub mod poisson;
pub mod regularization;
pub mod snapshot;
pub mod state;

pub use error::{Error, Result};
pub use grid::{BoundaryData, BoundaryRule, Grid, ScalarField, VectorField};
