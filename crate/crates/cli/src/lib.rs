//! Command-line driver for the joint LiDAR-camera calibration toolkit:
//! scene generation, detection, calibration, evaluation against ground
//! truth, the one-stage/two-stage ablation, the intrinsic consistency study
//! and overlay rendering.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod consistency;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod render;
