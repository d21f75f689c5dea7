//! vqforge: a desk-scale vector-quantization laboratory.
//!
//! Single-level and two-level hierarchical vector-quantized autoencoders
//! built from analytic linear patch codecs, with EMA codebook learning,
//! dead-code resets, capacity matching between architectures, utilization
//! metrics, and a reproducible experiment harness.
//!
//! The numeric core is generic over the scalar type (`f32`/`f64`, see
//! [`num::Scalar`]); concrete aliases for both widths live at the crate
//! root. Checkpoints store 32-bit floats, so the harness and CLI run the
//! `f32` instantiation.

pub mod codebook;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod transform;

pub use error::{Error, Result};
pub use num::Scalar;

pub type Image32 = grid::Image<f32>;
pub type Image64 = grid::Image<f64>;
pub type LatentGrid32 = grid::LatentGrid<f32>;
pub type LatentGrid64 = grid::LatentGrid<f64>;
pub type Codebook32 = codebook::Codebook<f32>;
pub type Codebook64 = codebook::Codebook<f64>;
pub type LinearCodec32 = transform::LinearCodec<f32>;
pub type LinearCodec64 = transform::LinearCodec<f64>;
pub type SingleLevelModel32 = pipeline::SingleLevelModel<f32>;
pub type SingleLevelModel64 = pipeline::SingleLevelModel<f64>;
pub type HierarchicalModel32 = pipeline::HierarchicalModel<f32>;
pub type HierarchicalModel64 = pipeline::HierarchicalModel<f64>;
pub type Model32 = pipeline::Model<f32>;
pub type Model64 = pipeline::Model<f64>;
