//! Adaptive multiple importance sampling (AMIS) for expectations over
//! drift-controlled diffusions.

pub mod adaptation;
pub mod engine;
pub mod error;
pub mod logspace;
pub mod problems;
pub mod reweight;
pub mod rng;
pub mod sde;
pub mod store;

pub use error::{AmisError, Result};
pub use engine::{run_amis, AmisConfig, AmisRun, Adaptation, IterationOutput};
pub use reweight::ReweightScheme;
