//! Mixture-of-Gaussians box regression: densities, gradients, decoding, a toy
//! detection head, synthetic occlusion data, and evaluation.
//!
//! The crate is `no_std` with `alloc`; file formats and the command line live in
//! the `boxmix` crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod distribution;
pub mod error;
pub mod eval;
pub mod gradient;
pub mod head;
pub mod inference;
pub mod linalg;
pub mod math;
pub mod synthetic;
pub mod train;

pub use distribution::{
    component_log_density, mixture_log_density, nll_loss, BoxVector, CholeskyFactor, LossVariant,
    MixtureParams,
};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use gradient::{grad_nll, ParamGradient};
pub use head::{HeadConfig, HeadModel};
pub use inference::{decode, BoxSource, DecodedBox, InferenceConfig, InferenceMode};
pub use synthetic::{generate, Scenario, ScenarioConfig, ToySample};
pub use train::{train, TrainConfig};
