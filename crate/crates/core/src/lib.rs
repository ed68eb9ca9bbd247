//! Numerical laboratory for Bernoulli free boundary energies with
//! unbounded weights.
//!
//! The functional minimized throughout is
//! `J(u) = ∫ ∇u·A∇u + φ·1{u > γ}` over cell-centered grid functions with
//! fixed boundary data. Modules:
//!
//! - [`field`]: grids, regions, scalar and coefficient fields, norms.
//! - [`weights`]: the catalog of weights `φ` and their cell averages.
//! - [`elliptic`]: the Q1 divergence-form operator and Dirichlet solves.
//! - [`minimize`]: smoothed and exact minimizers, rescaling.
//! - [`radial`]: closed-form radial comparison family and its energy.
//! - [`analyze`]: free boundary extraction and exponent/density measurements.
//! - [`scenarios`] and [`criteria`]: shared experiment setups and the
//!   acceptance checks run by both the test suite and the CLI.

pub mod analyze;
pub mod criteria;
pub mod elliptic;
pub mod error;
pub mod field;
pub mod io;
pub mod minimize;
pub mod quad;
pub mod radial;
pub mod scenarios;
pub mod weights;

pub use error::{Error, Result};
pub use field::{CoefficientField, Cone, Grid, Region, ScalarField, Shape};

pub use weights::{BernoulliWeight, WeightSpec};
