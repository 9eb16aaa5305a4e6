//! Lifelong policy learning for path-tracking control.
//!
//! A steering policy is learned from imperfect demonstrations by inverse
//! dynamics, then refined online with A-GEM constrained updates gated by a
//! knowledge-evaluation scheme. The crate also carries the vehicle simulator,
//! a small MLP engine and the comparison baselines (IL retraining, plain
//! lifelong learning, linear MPC, demonstration-initialized actor-critic).

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod llpl;
pub mod mlp;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use llpl::{EpisodicMemory, EvalConfig};
pub use mlp::{Activation, GradientVector, MlpModel, Normalizer};
pub use policy::{Dataset, Policy, Sample};
pub use sim::{ReferencePath, SimConfig, TrackingError, VehicleParams, VehicleState};
