//! Particle mean-field variational inference.
//!
//! The crate approximates the mean-field (product-form) minimizer `q*` of
//! `KL(q ‖ π)` for a strongly log-concave target `π ∝ exp(−V)` on `R^m` by
//! evolving an `m×N` particle array: row `i` holds `N` particles for
//! coordinate `i`, and the product of the row empirical measures is the
//! current approximation.
//!
//! * [`potential`]: target potentials and their constants `(α, L, L̃)`.
//! * [`particles`]: particle arrays, product empirical measures, snapshots.
//! * [`dynamics`]: PAVI and exact-gradient updates, step-size guard, runs.
//! * [`metrics`]: one-dimensional and product W2 distances, moment diagnostics.
//! * [`oracle`]: grid fixed-point solver for `q*` and closed-form Gaussian solutions.
//! * [`harness`]: configuration, reports, sweeps, checks and CLI commands.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod particles;
pub mod potential;
pub mod rng;

pub use dynamics::{corollary_schedule, run, validate_config, Algorithm, RunConfig, Schedule};
pub use error::{Error, Result};
pub use metrics::{ReferenceProduct, Marginal};
pub use particles::{ParticleArray, InitSpec};
pub use potential::{Potential, PotentialConfig, SharedPotential};
