//! Knowledge-grounded dialog modeling: corpus loading, hashed-bag encoders,
//! metric learning, knowledge selection, turn detection, response
//! generation and evaluation.

pub mod checkpoint;
pub mod corpus;
pub mod detection;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod heads;
pub mod metric_learning;
pub mod rng;
pub mod selection;
pub mod toy;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
