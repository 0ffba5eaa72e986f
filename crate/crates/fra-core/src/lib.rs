//! Frequency-regularized feature-alignment attack engine.
//!
//! The crate optimizes an additive image perturbation so that the features a
//! surrogate-encoder ensemble extracts from the perturbed source image move
//! toward those of a target image. The loss combines a global cosine term
//! with an entropic-OT alignment of the most energetic high-frequency
//! token-DCT components, and the gradient is low-pass filtered in the 2-D
//! DCT domain before each optimizer step. Everything runs at desk scale on
//! small, fully differentiable seeded toy encoders.

pub mod alignment;
pub mod attack;
pub mod defenses;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod rng;
pub mod selfcheck;
pub mod spectral;
pub mod synth;
pub mod tensor;

pub use error::{FraError, Result, Warning};
pub use tensor::{Image, Matrix, Tensor4};
