//! Transformer-based multimodal vehicle-trajectory prediction with
//! uncertainty estimation, end to end on synthetic scenes: scene generation
//! and rasterization, a ViT-style encoder, a K-hypothesis noise-conditioned
//! decoder, mixture-of-Gaussians / uncertainty-RMSE training, and
//! retention-based evaluation metrics.

pub mod config;
pub mod decoder;
pub mod diffgraph;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod trainer;
pub mod scenegen;
pub mod seed;

pub use error::{Error, Result};
