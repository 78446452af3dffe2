//! Subcommand bodies: file discovery, reading, the pipeline call and the
//! artifact writes. Each returns a one-line JSON summary for stdout.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use jointcalib::board::BoardSpec;
use jointcalib::optimize::compute_circle_centers_2d;
use jointcalib::ply::{read_ply, write_ply};
use jointcalib::simulate::{
    reference_camera, simulate_frame, FrameObservations, SceneTruth, FRAME_CONVENTION,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::ablation::ablation_study;
use crate::config::RunConfig;
use crate::consistency::{consistency_study, synthetic_group};
use crate::error::{CliError, Stage};
use crate::evaluate::{check_convention, evaluate_extrinsic, evaluate_intrinsic, EvalReport};
use crate::pipeline::{
    calibrate_with_detections, run_detection, setups_from_placements, BoardSetup, CalibrationResult,
    DetectionOutcome, FrameDetections, FrameInput, PipelineOptions,
};
use crate::render::{render_overlay, CenterMark, Image};

pub const TRUTH_FILE: &str = "truth.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const CONSISTENCY_FILE: &str = "consistency.json";

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate the configured scene into the frames directory.
    Generate,
    /// Locate the hole centers of every board in every frame.
    Detect,
    /// Detect, initialize and jointly solve intrinsics and extrinsic.
    Calibrate {
        /// Corner-only camera solve followed by an extrinsic-only solve.
        #[arg(long)]
        two_stage: bool,
    },
    /// Compare the calibration with the frames' ground truth.
    Evaluate,
    /// One-stage against two-stage from a perturbed focal length.
    Ablation,
    /// Spread of the intrinsic bootstrap over random view subsets.
    Consistency,
    /// Draw the LiDAR cloud and hole centers over each frame.
    Render,
}

pub fn frame_stem(i: usize) -> String {
    format!("frame_{i:03}")
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report types serialize");
    s.push(b'\n');
    s
}

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8], stage: Stage) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(stage, dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(stage, &tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(stage, path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(stage, path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(stage, path, e))
}

fn require_dir(dir: &Path, stage: Stage) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::io(stage, dir, "directory not found"))
    }
}

/// Frames `frame_NNN.json` in index order with their point clouds.
pub fn load_frames(dir: &Path, stage: Stage) -> Result<Vec<FrameInput>, CliError> {
    require_dir(dir, stage)?;
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(stage, dir, e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let stem = name.strip_suffix(".json")?;
            let idx = stem.strip_prefix("frame_")?;
            idx.chars().all(|c| c.is_ascii_digit()).then(|| stem.to_string())
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::io(stage, dir, "no frame_NNN.json observation files"));
    }
    stems
        .par_iter()
        .map(|stem| {
            let observations: FrameObservations = read_json(&dir.join(format!("{stem}.json")), stage)?;
            let ply = dir.join(format!("{stem}.ply"));
            let file = fs::File::open(&ply).map_err(|e| CliError::io(stage, &ply, e))?;
            let cloud = read_ply(BufReader::new(file)).map_err(|e| CliError::io(stage, &ply, e))?;
            Ok(FrameInput { cloud, observations })
        })
        .collect()
}

pub fn load_truth(dir: &Path, stage: Stage) -> Result<SceneTruth, CliError> {
    read_json(&dir.join(TRUTH_FILE), stage)
}

/// Configured board setups, or ones placed around the truth poses.
pub fn board_setups(cfg: &RunConfig, seed: u64, stage: Stage) -> Result<Vec<BoardSetup>, CliError> {
    if let Some(b) = &cfg.boards {
        if b.is_empty() {
            return Err(CliError::config("boards list is empty"));
        }
        return Ok(b.clone());
    }
    let truth = load_truth(&cfg.frames_dir, stage)?;
    Ok(setups_from_placements(&truth.board_specs, &truth.board_to_lidar, cfg.roi_margin, seed))
}

/// Configured detections, or a fresh detector run.
fn detections_for(cfg: &RunConfig, frames: &[FrameInput], boards: &[BoardSetup]) -> Result<Vec<FrameDetections>, CliError> {
    let Some(path) = &cfg.detections else {
        return run_detection(frames, boards);
    };
    let d: Vec<FrameDetections> = read_json(path, Stage::Detect)?;
    if d.len() != frames.len() || d.iter().any(|f| f.boards.len() != boards.len()) {
        return Err(CliError::config(format!(
            "{}: detections do not match {} frames of {} boards",
            path.display(),
            frames.len(),
            boards.len()
        )));
    }
    Ok(d)
}

fn pipeline_options(cfg: &RunConfig, two_stage: bool) -> PipelineOptions {
    PipelineOptions { optimize: cfg.optimize.clone(), initial_extrinsic: cfg.initial_extrinsic, two_stage }
}

fn count_outcomes(d: &[FrameDetections]) -> (usize, usize) {
    let all = d.iter().flat_map(|f| &f.boards);
    let ok = all.clone().filter(|o| matches!(o, DetectionOutcome::Detected(_))).count();
    (ok, all.count() - ok)
}

pub fn run(cmd: &Command, cfg: &RunConfig, seed: Option<u64>) -> Result<String, CliError> {
    let det_seed = seed.unwrap_or(0);
    let summary = match cmd {
        Command::Generate => {
            let scene = cfg.scene_spec(seed)?;
            let frames: Vec<_> = (0..scene.frames)
                .into_par_iter()
                .map(|f| simulate_frame(&scene, f))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::new(Stage::Generate, "Simulation", &e.to_string()))?;
            for (i, frame) in frames.iter().enumerate() {
                let stem = frame_stem(i);
                let mut ply = Vec::new();
                write_ply(&mut ply, &frame.cloud).map_err(|e| CliError::new(Stage::Generate, "Ply", &e.to_string()))?;
                write_atomic(&cfg.frames_dir.join(format!("{stem}.ply")), &ply, Stage::Generate)?;
                write_atomic(&cfg.frames_dir.join(format!("{stem}.json")), &to_json(&frame.observations()), Stage::Generate)?;
            }
            write_atomic(&cfg.frames_dir.join(TRUTH_FILE), &to_json(&scene.truth()), Stage::Generate)?;
            json!({"command": "generate", "frames": frames.len(), "boards": scene.boards.len(), "seed": scene.seed})
        }
        Command::Detect => {
            let frames = load_frames(&cfg.frames_dir, Stage::Detect)?;
            let boards = board_setups(cfg, det_seed, Stage::Detect)?;
            let detections = run_detection(&frames, &boards)?;
            write_atomic(&cfg.output_dir.join(DETECTIONS_FILE), &to_json(&detections), Stage::Detect)?;
            let (ok, failed) = count_outcomes(&detections);
            json!({"command": "detect", "frames": frames.len(), "detected": ok, "failed": failed})
        }
        Command::Calibrate { two_stage } => {
            let frames = load_frames(&cfg.frames_dir, Stage::Detect)?;
            let boards = board_setups(cfg, det_seed, Stage::Detect)?;
            let detections = detections_for(cfg, &frames, &boards)?;
            let result = calibrate_with_detections(&frames, &boards, &detections, &pipeline_options(cfg, *two_stage))?;
            write_atomic(&cfg.output_dir.join(DETECTIONS_FILE), &to_json(&detections), Stage::Detect)?;
            write_atomic(&cfg.output_dir.join(CALIBRATION_FILE), &to_json(&result), Stage::Optimize)?;
            json!({
                "command": "calibrate",
                "method": result.method,
                "views": result.views.len(),
                "converged": result.report.converged,
                "rms": result.rms,
            })
        }
        Command::Evaluate => {
            let result: CalibrationResult = read_json(&cfg.output_dir.join(CALIBRATION_FILE), Stage::Evaluate)?;
            let truth = load_truth(&cfg.frames_dir, Stage::Evaluate)?;
            check_convention(&result.frame_convention, &truth.frame_convention)?;
            let report = EvalReport {
                frame_convention: truth.frame_convention.clone(),
                extrinsic: Some(evaluate_extrinsic(&result.lidar_to_camera, &truth.lidar_to_camera)?),
                intrinsic: Some(evaluate_intrinsic(&result.camera, &truth.camera)),
                ..Default::default()
            };
            write_atomic(&cfg.output_dir.join(EVALUATION_FILE), &to_json(&report), Stage::Evaluate)?;
            json!({"command": "evaluate", "extrinsic": report.extrinsic})
        }
        Command::Ablation => {
            let frames = load_frames(&cfg.frames_dir, Stage::Detect)?;
            let boards = board_setups(cfg, det_seed, Stage::Detect)?;
            let detections = detections_for(cfg, &frames, &boards)?;
            let ablation = ablation_study(
                &frames,
                &boards,
                &detections,
                &cfg.optimize,
                cfg.initial_extrinsic,
                cfg.ablation.fx_perturbation,
            )?;
            let report = EvalReport {
                frame_convention: FRAME_CONVENTION.to_string(),
                ablation: Some(ablation),
                ..Default::default()
            };
            write_atomic(&cfg.output_dir.join(ABLATION_FILE), &to_json(&report), Stage::Evaluate)?;
            json!({"command": "ablation", "ablation": report.ablation})
        }
        Command::Consistency => {
            let c = &cfg.consistency;
            let (camera, spec, size) = match &cfg.scene {
                Some(_) => {
                    let s = cfg.scene_spec(None)?;
                    (s.camera_truth, s.boards[0].spec.clone(), (s.image_width, s.image_height))
                }
                None => (reference_camera(), BoardSpec::default(), (1920, 1080)),
            };
            let seed = seed.unwrap_or(0);
            let groups: Vec<_> = (0..c.groups)
                .map(|g| synthetic_group(&camera, &spec, size, c.views_per_group, c.corner_noise_px, seed, g))
                .collect();
            let stats = consistency_study(&groups, &spec, size, c.trials, c.subset_size, c.refine, &cfg.optimize, seed)?;
            let report = EvalReport {
                frame_convention: FRAME_CONVENTION.to_string(),
                consistency: Some(stats),
                ..Default::default()
            };
            write_atomic(&cfg.output_dir.join(CONSISTENCY_FILE), &to_json(&report), Stage::Evaluate)?;
            let fx: Vec<_> = report.consistency.as_ref().unwrap().groups.iter().map(|g| &g.parameters[0]).collect();
            json!({"command": "consistency", "fx": fx})
        }
        Command::Render => render_frames(cfg, det_seed)?,
    };
    Ok(summary.to_string())
}

fn marks_for(
    frame: usize,
    result: &CalibrationResult,
    detections: &[FrameDetections],
    specs: &[BoardSpec],
) -> Vec<CenterMark> {
    let mut marks = Vec::new();
    for (view, pose) in result.views.iter().zip(&result.board_poses) {
        if view.frame != frame {
            continue;
        }
        let Some(DetectionOutcome::Detected(d)) = detections.get(frame).and_then(|f| f.boards.get(view.board)) else {
            continue;
        };
        let Ok(anchors) = compute_circle_centers_2d(&result.camera, pose, &specs[view.board]) else {
            continue;
        };
        marks.extend(d.circle_centers_3d.iter().zip(anchors).map(|(l, a)| CenterMark { lidar: *l, anchor: a }));
    }
    marks
}

fn render_frames(cfg: &RunConfig, det_seed: u64) -> Result<serde_json::Value, CliError> {
    let result: CalibrationResult = read_json(&cfg.output_dir.join(CALIBRATION_FILE), Stage::Render)?;
    let frames = load_frames(&cfg.frames_dir, Stage::Render)?;
    let det_path = cfg.output_dir.join(DETECTIONS_FILE);
    let detections: Vec<FrameDetections> =
        if det_path.exists() { read_json(&det_path, Stage::Render)? } else { Vec::new() };
    let specs: Vec<BoardSpec> = board_setups(cfg, det_seed, Stage::Render)?.into_iter().map(|b| b.spec).collect();
    let background = match &cfg.render.background {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| CliError::io(Stage::Render, p, e))?;
            Some(Image::read_ppm(BufReader::new(file)).map_err(|e| CliError::io(Stage::Render, p, e))?)
        }
        None => None,
    };
    let mut out_of_bounds = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let (w, h) = (frame.observations.image_width, frame.observations.image_height);
        let canvas = match &background {
            Some(b) if b.width == w && b.height == h => b.clone(),
            Some(_) => return Err(CliError::config("background size differs from the frame's image size")),
            None => Image::new(w, h),
        };
        let marks = marks_for(i, &result, &detections, &specs);
        let (img, stats) =
            render_overlay(&frame.cloud, &result.camera, &result.lidar_to_camera, &marks, canvas, &cfg.render);
        let mut bytes = Vec::with_capacity(img.pixels.len() + 32);
        img.write_ppm(&mut bytes).expect("writing to memory");
        write_atomic(&cfg.output_dir.join(format!("overlay_{i:03}.ppm")), &bytes, Stage::Render)?;
        out_of_bounds.push(json!({"frame": i, "drawn": stats.drawn, "out_of_bounds": stats.out_of_bounds, "marks": marks.len()}));
    }
    Ok(json!({"command": "render", "frames": out_of_bounds}))
}
