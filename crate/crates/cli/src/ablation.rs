//! One-stage versus two-stage comparison on identical inputs, starting
//! from a deliberately biased focal length.

use jointcalib::optimize::{OptimizeOptions, OptimizeReport};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::pipeline::{build_problem, initialize_camera, solve_problem, BoardSetup, FrameDetections, FrameInput};

/// Reprojection RMS in pixels of the hole centers (LiDAR group) and the
/// checkerboard corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodRms {
    pub circle: f64,
    pub corner: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub fx_perturbation: f64,
    pub initial_fx: f64,
    pub perturbed_fx: f64,
    pub one_stage: MethodRms,
    pub two_stage: MethodRms,
    /// One-stage circle RMS below two-stage.
    pub circle_order_holds: bool,
    /// Two-stage corner RMS not above one-stage.
    pub corner_order_holds: bool,
}

fn rms_of(report: &OptimizeReport) -> MethodRms {
    MethodRms { circle: report.rms.lidar.unwrap_or(f64::NAN), corner: report.rms.corner.unwrap_or(f64::NAN) }
}

pub fn ablation_study(
    frames: &[FrameInput],
    boards: &[BoardSetup],
    detections: &[FrameDetections],
    opts: &OptimizeOptions,
    initial_extrinsic: Option<jointcalib::geometry::Pose>,
    fx_perturbation: f64,
) -> Result<AblationReport, CliError> {
    ablation_solves(frames, boards, detections, opts, initial_extrinsic, fx_perturbation).map(|(r, _, _)| r)
}

/// As [`ablation_study`], also handing back the one-stage and two-stage
/// solver reports.
pub fn ablation_solves(
    frames: &[FrameInput],
    boards: &[BoardSetup],
    detections: &[FrameDetections],
    opts: &OptimizeOptions,
    initial_extrinsic: Option<jointcalib::geometry::Pose>,
    fx_perturbation: f64,
) -> Result<(AblationReport, OptimizeReport, OptimizeReport), CliError> {
    let init = initialize_camera(frames, boards, opts)?;
    let mut camera = init.camera;
    camera.fx *= 1.0 + fx_perturbation;
    let problem = build_problem(frames, boards, &init.views, &camera, &init.board_poses, detections, initial_extrinsic)?;
    let one = solve_problem(&problem, opts, false)?;
    let two = solve_problem(&problem, opts, true)?;
    let (one_stage, two_stage) = (rms_of(&one), rms_of(&two));
    let report = AblationReport {
        fx_perturbation,
        initial_fx: init.camera.fx,
        perturbed_fx: camera.fx,
        one_stage,
        two_stage,
        circle_order_holds: one_stage.circle < two_stage.circle,
        corner_order_holds: two_stage.corner <= one_stage.corner,
    };
    Ok((report, one, two))
}
