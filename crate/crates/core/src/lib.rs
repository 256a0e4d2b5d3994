//! Numerical core for evaluating the robustness of feature attributions
//! against output-similar inputs.
//!
//! Everything here is pure computation over `alloc`: tensors and reverse-mode
//! autodiff, dense networks with Adam, six attribution methods, similar-input
//! generators (a per-input GAN and noise baselines) and the robustness,
//! fidelity and ranking metrics. File formats, configuration and the CLI live
//! in the `osrkit` crate.
#![no_std]

extern crate alloc;

pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod similar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::Tensor;
