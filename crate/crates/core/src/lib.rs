//! Convolutional networks with symmetric alpha-stable weights and biases.
//!
//! The crate covers both sides of the infinite-channel picture:
//!
//! * [`network`] simulates a finite-channel network jointly over `K` inputs,
//!   with layers past the first scaled by `C^{-1/alpha}`;
//! * [`limit`] computes the spectral measures of the limiting multivariate
//!   stable law layer by layer (exact at layer one, Monte Carlo beyond);
//! * [`verify`] compares the two through empirical characteristic functions.
//!
//! All flattened vectors over `positions x inputs` use row-major order with
//! the input index `k` varying fastest: `flat = position * K + k`, where
//! `position` is itself the row-major index over the spatial axes.

pub mod cache;
pub mod config;
pub mod error;
pub mod limit;
pub mod network;
pub mod patch;
pub mod rng;
pub mod run;
pub mod spectral;
pub mod stable;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use limit::LimitConfig;
pub use network::{Activation, ActivationSpec, NetworkOutput, NetworkSpec};
pub use patch::{ConvLayerConfig, PatchMap};
pub use rng::SeedStream;
pub use spectral::{Atom, BiasTag, ProjectedStableParams, SpectralMeasure};
pub use stable::StableParams;
pub use tensor::{Axis, AxisRole, Tensor};
