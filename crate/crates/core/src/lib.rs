//! Training-free acceleration for diffusion-transformer sampling.
//!
//! The pieces compose bottom-up:
//!
//! - [`affinity`] scores prompt tokens against a vocabulary of aesthetic
//!   anchor words.
//! - [`mask`] turns captured cross-attention into a binary focus mask.
//! - [`block`] runs a transformer block with focus-only queries and a cached
//!   background FFN.
//! - [`guidance`] applies classifier-free guidance with a per-token scale.
//! - [`stepcache`] plans full/skipped steps and extrapolates skipped
//!   predictions.
//! - [`model`] is a small seeded reference denoiser with an Euler sampler.
//! - [`experiment`] drives runs and sweeps and produces FLOP reports.

pub mod affinity;
pub mod block;
pub mod error;
pub mod experiment;
pub mod guidance;
pub mod mask;
pub mod math;
pub mod model;
pub mod stepcache;

pub use error::{Error, Result};
pub use math::Matrix;
