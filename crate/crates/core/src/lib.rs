//! Spectral analysis of random matrices whose entries come from stationary
//! random fields on the two-dimensional integer lattice.
//!
//! The crate is organised along the pipeline
//!
//! | module | role |
//! |--------|------|
//! | [`field_models`] | i.i.d., linear, Volterra and Gaussian-matched field patches |
//! | [`covariance_kernel`] | covariance functions, structural checks, spectral kernel `f(x, y)` |
//! | [`ensembles`] | symmetric (Wigner-type) and Gram matrices, embeddings, blocking checks |
//! | [`spectral_empirics`] | eigenvalues, Stieltjes transforms, Lévy / Kolmogorov distances |
//! | [`limit_solver`] | fixed-point solvers for the limiting Stieltjes transform |
//! | [`harness`] | seeded Monte Carlo experiments (universality, convergence, concentration) |

pub mod covariance_kernel;
pub mod ensembles;
pub mod error;
pub mod field_models;
pub mod harness;
pub mod limit_solver;
pub mod spectral_empirics;

pub use error::{Error, Result};

/// Offset on the lattice ℤ², `(row, column)`.
pub type Lag = (i64, i64);

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
