//! Simulation laboratory for SGD on wide two-layer networks viewed as an
//! interacting particle system, together with its deterministic and
//! stochastic mean-field limits.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod meanfield;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stationary;

pub use error::{Error, Result};
pub use model::{DataAtom, DataDistribution, Hyperparams, ModelSpec};
pub use rng::NoisePlan;
