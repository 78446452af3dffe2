//! Joint calibration of camera intrinsics, lens distortion and the
//! LiDAR-to-camera extrinsic from a checkerboard target with four circular
//! holes.
//!
//! Pipeline: [`detect`] finds the hole centers in each LiDAR cloud,
//! [`init`] bootstraps intrinsics and board poses from checkerboard
//! corners, and [`optimize`] refines everything jointly.

pub mod board;
pub mod detect;
pub mod geometry;
pub mod init;
pub mod optimize;
pub mod ply;
pub mod simulate;
