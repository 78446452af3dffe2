//! Detection, initialization and joint solve chained over one or more
//! captured frames.

use jointcalib::board::BoardSpec;
use jointcalib::detect::{detect_boards, Alignment, BoardDetection, DetectionParams, Plane};
use jointcalib::geometry::{CameraModel, Pose, Vec3};
use jointcalib::init::{initialize, InitError};
use jointcalib::optimize::{
    align_point_sets, compute_circle_centers_2d, refine_with_corners, solve, solve_two_stage, BoardPairs,
    GroupRms, OptimizeError, OptimizeOptions, OptimizeReport, ParameterBlock, PointPairSet,
};
use jointcalib::simulate::{CornerObservation, FrameObservations, LidarPoint, FRAME_CONVENTION};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Stage};

/// Per-board detection setup, shared by every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSetup {
    pub spec: BoardSpec,
    pub detection: DetectionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub cloud: Vec<LidarPoint>,
    pub observations: FrameObservations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub optimize: OptimizeOptions,
    /// Starting extrinsic; aligned from the detected centers when absent.
    pub initial_extrinsic: Option<Pose>,
    pub two_stage: bool,
}

/// Which board of which frame a view came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewId {
    pub frame: usize,
    pub board: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: usize,
    pub boards: Vec<DetectionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionOutcome {
    Detected(BoardDetection),
    Failed { board: usize, error: String },
}

/// Detects every configured board in every frame.
pub fn run_detection(frames: &[FrameInput], boards: &[BoardSetup]) -> Result<Vec<FrameDetections>, CliError> {
    let setups: Vec<(BoardSpec, DetectionParams)> =
        boards.iter().map(|b| (b.spec.clone(), b.detection.clone())).collect();
    frames
        .iter()
        .enumerate()
        .map(|(f, frame)| {
            let results = detect_boards(&frame.cloud, &setups).map_err(|e| CliError::detect(&e))?;
            let boards = results
                .into_iter()
                .enumerate()
                .map(|(board, r)| match r {
                    Ok(d) => DetectionOutcome::Detected(d),
                    Err(e) => DetectionOutcome::Failed { board, error: e.to_string() },
                })
                .collect();
            Ok(FrameDetections { frame: f, boards })
        })
        .collect()
}

/// Corner views of every (frame, board) with at least four corners.
pub fn corner_views(frames: &[FrameInput]) -> (Vec<ViewId>, Vec<Vec<CornerObservation>>) {
    let mut ids = Vec::new();
    let mut views = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        for bc in &frame.observations.boards {
            if bc.corners.len() >= 4 {
                ids.push(ViewId { frame: f, board: bc.board });
                views.push(bc.corners.clone());
            }
        }
    }
    (ids, views)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraInit {
    pub views: Vec<ViewId>,
    pub zhang: CameraModel,
    pub zhang_corner_rms: Vec<f64>,
    /// After corner-only refinement of intrinsics, distortion and poses.
    pub camera: CameraModel,
    pub board_poses: Vec<Pose>,
    pub refine_converged: bool,
}

fn shared_spec(boards: &[BoardSetup]) -> Result<&BoardSpec, CliError> {
    let first = boards.first().ok_or_else(|| CliError::config("no boards configured"))?;
    if boards.iter().any(|b| b.spec != first.spec) {
        return Err(CliError::config("all boards must share one board specification"));
    }
    Ok(&first.spec)
}

fn accept_unconverged(r: Result<OptimizeReport, OptimizeError>) -> Result<OptimizeReport, OptimizeError> {
    match r {
        Err(OptimizeError::NotConverged(report)) => Ok(*report),
        other => other,
    }
}

/// Zhang bootstrap followed by a corner-only refinement.
pub fn initialize_camera(
    frames: &[FrameInput],
    boards: &[BoardSetup],
    opts: &OptimizeOptions,
) -> Result<CameraInit, CliError> {
    let spec = shared_spec(boards)?;
    let (ids, views) = corner_views(frames);
    let first = frames.first().ok_or_else(|| CliError::config("no frames"))?;
    let size = (first.observations.image_width, first.observations.image_height);
    let init = initialize(&views, spec).map_err(|e: InitError| CliError::init(&e))?;
    let refined = accept_unconverged(refine_with_corners(&init.camera, &init.board_poses, &views, size, opts))
        .map_err(|e| CliError::optimize(&e))?;
    Ok(CameraInit {
        views: ids,
        zhang: init.camera,
        zhang_corner_rms: init.corner_rms,
        camera: refined.params.camera,
        board_poses: refined.params.board_poses,
        refine_converged: refined.converged,
    })
}

/// Joint-problem inputs built from a camera initialization and detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointProblem {
    pub views: Vec<ViewId>,
    pub initial: ParameterBlock,
    pub pairs: PointPairSet,
}

/// Pairs detected LiDAR centers with anchors projected from `camera` and
/// `board_poses`. Views whose board was not detected are left out.
pub fn build_problem(
    frames: &[FrameInput],
    boards: &[BoardSetup],
    init_views: &[ViewId],
    camera: &CameraModel,
    board_poses: &[Pose],
    detections: &[FrameDetections],
    initial_extrinsic: Option<Pose>,
) -> Result<JointProblem, CliError> {
    let mut views = Vec::new();
    let mut poses = Vec::new();
    let mut pairs = Vec::new();
    let mut lidar_pts = Vec::new();
    let mut camera_pts = Vec::new();
    for (id, pose) in init_views.iter().zip(board_poses) {
        let Some(DetectionOutcome::Detected(det)) = detections
            .get(id.frame)
            .and_then(|f| f.boards.get(id.board))
        else {
            continue;
        };
        let spec = &boards[id.board].spec;
        let anchors = compute_circle_centers_2d(camera, pose, spec)
            .map_err(|e| CliError::optimize(&OptimizeError::Geometry(e)))?;
        let corners = frames[id.frame]
            .observations
            .boards
            .iter()
            .find(|b| b.board == id.board)
            .map(|b| b.corners.clone())
            .unwrap_or_default();
        for (h, l) in spec.circle_centers().iter().zip(&det.circle_centers_3d) {
            camera_pts.push(pose.apply(h));
            lidar_pts.push(*l);
        }
        pairs.push(BoardPairs::new(spec, corners, det.circle_centers_3d, anchors));
        poses.push(*pose);
        views.push(*id);
    }
    if pairs.is_empty() {
        return Err(CliError::new(Stage::Detect, "NoDetections", "no board was detected in any frame"));
    }
    let extrinsic = match initial_extrinsic {
        Some(p) => p,
        None => align_point_sets(&lidar_pts, &camera_pts).map_err(|e| CliError::optimize(&e))?,
    };
    let obs = &frames[0].observations;
    Ok(JointProblem {
        views,
        initial: ParameterBlock { camera: *camera, lidar_to_camera: extrinsic, board_poses: poses },
        pairs: PointPairSet { boards: pairs, image_width: obs.image_width, image_height: obs.image_height },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub frame_convention: String,
    pub method: String,
    pub camera: CameraModel,
    pub lidar_to_camera: Pose,
    pub views: Vec<ViewId>,
    pub board_poses: Vec<Pose>,
    pub rms: GroupRms,
    pub initial_camera: CameraModel,
    pub initial_extrinsic: Pose,
    pub report: OptimizeReport,
}

pub fn solve_problem(problem: &JointProblem, opts: &OptimizeOptions, two_stage: bool) -> Result<OptimizeReport, CliError> {
    let r = if two_stage {
        solve_two_stage(&problem.initial, &problem.pairs, opts)
    } else {
        solve(&problem.initial, &problem.pairs, opts)
    };
    accept_unconverged(r).map_err(|e| CliError::optimize(&e))
}

/// Detect, initialize, pair and solve.
pub fn calibrate(
    frames: &[FrameInput],
    boards: &[BoardSetup],
    options: &PipelineOptions,
) -> Result<(Vec<FrameDetections>, CalibrationResult), CliError> {
    let detections = run_detection(frames, boards)?;
    let result = calibrate_with_detections(frames, boards, &detections, options)?;
    Ok((detections, result))
}

/// As [`calibrate`] with detections supplied, e.g. read back from disk or
/// taken from simulation truth.
pub fn calibrate_with_detections(
    frames: &[FrameInput],
    boards: &[BoardSetup],
    detections: &[FrameDetections],
    options: &PipelineOptions,
) -> Result<CalibrationResult, CliError> {
    let init = initialize_camera(frames, boards, &options.optimize)?;
    let problem = build_problem(
        frames,
        boards,
        &init.views,
        &init.camera,
        &init.board_poses,
        detections,
        options.initial_extrinsic,
    )?;
    let report = solve_problem(&problem, &options.optimize, options.two_stage)?;
    Ok(CalibrationResult {
        frame_convention: FRAME_CONVENTION.to_string(),
        method: if options.two_stage { "two_stage" } else { "one_stage" }.to_string(),
        camera: report.params.camera,
        lidar_to_camera: report.params.lidar_to_camera,
        views: problem.views,
        board_poses: report.params.board_poses.clone(),
        rms: report.rms,
        initial_camera: init.camera,
        initial_extrinsic: problem.initial.lidar_to_camera,
        report,
    })
}

/// Detections standing in for a perfect detector: hole centers exactly
/// where the scene put them.
pub fn exact_detections(centers: &[[Vec3; 4]], board_to_lidar: &[Pose], frames: usize) -> Vec<FrameDetections> {
    let boards: Vec<DetectionOutcome> = centers
        .iter()
        .zip(board_to_lidar)
        .map(|(c, pose)| {
            let n = pose.rotation_matrix().column(2).into_owned();
            DetectionOutcome::Detected(BoardDetection {
                plane: Plane { normal: n, d: -n.dot(&pose.translation) },
                board_pose_in_lidar: *pose,
                circle_centers_3d: *c,
                alignment: Alignment { yaw: 0.0, x: 0.0, y: 0.0, cost: 0 },
                alignment_cost: 0,
                inlier_count: 0,
            })
        })
        .collect();
    (0..frames).map(|frame| FrameDetections { frame, boards: boards.clone() }).collect()
}

/// Detection setups around the nominal board placements of a scene.
pub fn setups_from_placements(specs: &[BoardSpec], board_to_lidar: &[Pose], margin: f64, seed: u64) -> Vec<BoardSetup> {
    specs
        .iter()
        .zip(board_to_lidar)
        .enumerate()
        .map(|(i, (spec, pose))| {
            let up = pose.rotation_matrix().column(1).into_owned();
            let mut detection = DetectionParams::around_board(spec, pose, up, margin);
            detection.seed = seed.wrapping_add(i as u64);
            BoardSetup { spec: spec.clone(), detection }
        })
        .collect()
}

