//! Zero-shot gas-leak segmentation for grayscale infrared video.
//!
//! Frames go through background subtraction and contrast enhancement, a
//! prompt-driven open-vocabulary detector, temporal validation of the boxes,
//! and segmentation inside the surviving boxes. The crate also carries the
//! evaluation harness and a synthetic fixture generator.

pub mod bgs;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod eval;
pub mod imgops;
pub mod pipeline;
pub mod remote;
pub mod segment;
pub mod sweep;
pub mod synth;
pub mod temporal;
pub mod types;
pub mod wire;

pub use config::PipelineConfig;
pub use pipeline::{run_dataset, run_video, Backends, PipelineError};
pub use types::{BBox, BinaryMask, Frame, ScoredBox, VideoClip};
