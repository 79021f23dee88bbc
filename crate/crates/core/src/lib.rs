//! From-scratch CNN engine for four-stage dementia MRI classification.
//!
//! Everything numerical — tensors, convolution, pooling, dense layers,
//! softmax cross-entropy, Adam, Glorot initialization, Grad-CAM — is
//! implemented here directly over `f32` buffers on the CPU. External crates
//! are used only for plumbing: PNG/JPEG codecs, the ChaCha8 random stream,
//! data-parallel loops, and error derives.
//!
//! Determinism: every random choice (weight init, dataset shuffles, case
//! sampling) flows from an explicit seed through ChaCha8, and parallel loops
//! only ever write disjoint output regions, so a fixed seed reproduces
//! byte-identical checkpoints, histories, and rendered images.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod render;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
