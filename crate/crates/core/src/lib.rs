//! Variational conditional mutual-information estimators and the
//! empowerment / curiosity intrinsic-reward stack built on them, together
//! with a PPO learner and a planar lifting environment.

pub mod env;
pub mod error;
pub mod intrinsic;
pub mod mi;
pub mod numerics;
pub mod rl;
pub mod synth;

pub use error::{Error, Result};
