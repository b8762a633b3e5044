//! Self-supervised point cloud registration.
//!
//! Visual and geometric per-point encoders produce descriptors, Lowe-ratio
//! weighted nearest-neighbor matches become correspondences, and a weighted
//! Procrustes fit turns them into a rigid transform. Training bootstraps from
//! randomly initialized encoders: the registration loss and a stop-gradient
//! similarity loss on visually matched geometric features need no pose
//! labels.
//!
//! Each capability has a runnable program under `examples/`.

pub mod alignment;
pub mod autodiff;
pub mod cli;
pub mod correspondence;
pub mod data;
pub mod features;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod learning;

pub use error::{Error, Result};
