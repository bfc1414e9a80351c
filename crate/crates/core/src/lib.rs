//! Verifier-guided inference-time scaling for flow-matching samplers on
//! analytic Gaussian-mixture targets.

// `!(a > b)` comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fields;
pub mod integrators;
pub mod metrics;
pub mod mixture;
pub mod rng;
pub mod schedule;
pub mod search;
pub mod state;
pub mod verify;

pub use error::{Error, Result};
pub use fields::{AnalyticField, VectorField};
pub use integrators::{Method, ParticleBatch, StepperConfig};
pub use mixture::GaussianMixtureTarget;
pub use rng::RngStream;
pub use state::{State, Trajectory};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
