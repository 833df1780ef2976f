//! Differentially private synthetic data from a privatized, class-conditional
//! empirical-NTK mean embedding.
//!
//! The pipeline: build a frozen feature network ([`ntk`]), embed the sensitive
//! data once and release it through the Gaussian mechanism ([`embedding`],
//! [`privacy`]), then train a conditional generator against the released
//! embedding only ([`generator`]). [`eval`] scores the generator by training
//! classifiers on synthetic data and testing them on real data.

pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod generator;
pub mod ntk;
pub mod privacy;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Tape, Tensor, Var};
