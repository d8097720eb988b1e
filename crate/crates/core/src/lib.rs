//! Sparse Bayesian discovery of PDEs from noisy spatiotemporal data.

pub mod bmu;
pub mod config;
pub mod discover;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod hbi;
pub mod library;
pub mod linalg;
pub mod pesbl;
pub mod preprocess;
pub mod propagate;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use field::{Axis, Boundary, FieldSeries, GridSpec, Provenance};
pub use scalar::Real;

/// Double-precision field, the default working type.
pub type Field = FieldSeries<f64>;
