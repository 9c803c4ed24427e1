//! Synthetic-occlusion augmentation and a differentiable 3D-pose decoding
//! core: occluder library construction from Pascal VOC, crop-camera
//! geometry, volumetric soft-argmax decoding with analytic gradients, an L1
//! training loss, and MPJPE evaluation.

pub mod augment;
pub mod camera;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod pose;
pub mod training;
pub mod voc;

pub use error::{Error, Result};
pub use pose::Pose3D;
