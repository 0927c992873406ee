//! Exact and Monte Carlo checks for groups of local-search agents on finite
//! landscapes: assumption checking, in-series deliberation, clone sampling,
//! disagreement-aware stochastic deliberation, and the crowd prediction-error
//! decomposition.

pub mod deliberation;
pub mod fixtures;
pub mod fuzz;
pub mod instance;
pub mod model;
pub mod oracle;
pub mod prediction;
pub mod rational;
pub mod sampling;
pub mod seeding;
pub mod stochastic;
pub mod table;

/// Crate version, recorded in report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
