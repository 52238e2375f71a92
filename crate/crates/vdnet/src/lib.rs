//! Saliency-guided object detection on a from-scratch f64 tensor engine.
//!
//! The crate splits a detection pipeline into two cooperating pathways,
//! loosely mirroring the two-stream organization of visual cortex:
//!
//! * a **ventral** pathway — a small image classifier whose input-gradient
//!   saliency ("what in this image drives recognition?") is smoothed and
//!   thresholded into a binary attention mask, and
//! * a **dorsal** pathway — a single-stage anchor-box detector that sees
//!   the masked image and predicts class scores and box offsets.
//!
//! Everything numeric is built here on purpose: [`tensor`] provides dense
//! f64 tensors with tape-based reverse-mode differentiation, [`network`]
//! stacks them into trainable models with a portable checkpoint format,
//! [`ventral`] and [`dorsal`] implement the two pathways, [`eval`] scores
//! detections (IoU, NMS, average precision), and [`data`] generates the
//! deterministic synthetic shape-scene corpus the whole thing trains on.
//! The only randomness source anywhere is [`rng::SplitMix64`], so a run is
//! reproducible bit for bit from a single seed.

pub mod boxes;
pub mod data;
pub mod dorsal;
pub mod error;
pub mod eval;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod ventral;

pub use boxes::{BBox, Detection, GroundTruth};
pub use error::{Error, Result};
pub use network::{LayerSpec, Model};
pub use tensor::{GradientMap, Tape, Tensor};
