//! Synthetic ground-truth scenes: noisy checkerboard corner observations
//! and ray-cast scans of posed boards from a spinning multi-channel LiDAR.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::BoardSpec;
use crate::geometry::{rotation_from_rpy, CameraModel, Pose, Vec2, Vec3};

/// Name of the Euler convention recorded alongside every pose file.
pub const FRAME_CONVENTION: &str = "lidar_to_camera; rpy intrinsic x-y'-z''";

const MAX_RANGE: f64 = 200.0;
const CORNER_STREAM: u64 = 0;
const LIDAR_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("board {board}: only {visible} corners inside the image")]
    BoardNotVisible { board: usize, visible: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub azimuth_resolution_deg: f64,
    pub elevation_channels_deg: Vec<f64>,
    #[serde(default)]
    pub range_noise_sigma_m: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        let channels = (0..64).map(|i| -16.0 + 32.0 * i as f64 / 63.0).collect();
        Self { azimuth_resolution_deg: 0.2, elevation_channels_deg: channels, range_noise_sigma_m: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedBoard {
    pub spec: BoardSpec,
    /// Maps board-frame points into the LiDAR frame.
    pub board_to_lidar: Pose,
}

/// Infinite plane `normal · p + offset = 0` in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub camera_truth: CameraModel,
    /// Maps LiDAR-frame points into the camera frame.
    pub lidar_to_camera_truth: Pose,
    pub boards: Vec<PlacedBoard>,
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub corner_noise_px: f64,
    #[serde(default)]
    pub seed: u64,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default = "one")]
    pub frames: usize,
    #[serde(default)]
    pub ground: Option<GroundPlane>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub position: Vec3,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub board_point: Vec3,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardCorners {
    pub board: usize,
    pub corners: Vec<CornerObservation>,
    /// Corners that fell outside the image and were dropped.
    #[serde(default)]
    pub dropped: usize,
}

/// Per-frame observation file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservations {
    pub image_width: u32,
    pub image_height: u32,
    pub boards: Vec<BoardCorners>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub frame_convention: String,
    pub camera: CameraModel,
    pub lidar_to_camera: Pose,
    pub board_specs: Vec<BoardSpec>,
    pub board_to_lidar: Vec<Pose>,
    pub board_to_camera: Vec<Pose>,
    /// Hole centers in the LiDAR frame, canonical order per board.
    pub circle_centers_lidar: Vec<[Vec3; 4]>,
    pub image_width: u32,
    pub image_height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub cloud: Vec<LidarPoint>,
    pub corner_obs: Vec<BoardCorners>,
    pub truth: SceneTruth,
}

impl SimFrame {
    pub fn observations(&self) -> FrameObservations {
        FrameObservations {
            image_width: self.truth.image_width,
            image_height: self.truth.image_height,
            boards: self.corner_obs.clone(),
        }
    }
}

/// Independent RNG stream per (seed, frame, purpose), so frame generation
/// order and parallelism never change the output.
pub fn stream_rng(seed: u64, frame: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((frame as u64) << 8) | stream);
    rng
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

impl SceneSpec {
    pub fn board_to_camera(&self, board: usize) -> Pose {
        self.lidar_to_camera_truth.compose(&self.boards[board].board_to_lidar)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if let Err(e) = self.camera_truth.validate(self.image_width, self.image_height) {
            return bad(e);
        }
        if !self.lidar_to_camera_truth.is_finite() {
            return bad("extrinsic must be finite".into());
        }
        let sigmas = [self.corner_noise_px, self.lidar.range_noise_sigma_m];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("noise levels must be finite and non-negative".into());
        }
        if !(self.lidar.azimuth_resolution_deg > 0.0) || self.lidar.elevation_channels_deg.is_empty() {
            return bad("LiDAR needs a positive azimuth resolution and at least one channel".into());
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        for (i, placed) in self.boards.iter().enumerate() {
            placed.spec.validate().map_err(|e| SimError::InvalidScene(format!("board {i}: {e}")))?;
            let to_cam = self.board_to_camera(i);
            let outline = outline_corners(&placed.spec);
            if outline.iter().any(|c| to_cam.apply(c).z <= 0.0) {
                return bad(format!("board {i} is not in front of the camera"));
            }
            let elevations: Vec<f64> = outline
                .iter()
                .map(|c| {
                    let p = placed.board_to_lidar.apply(c);
                    p.z.atan2(p.xy().norm()).to_degrees()
                })
                .collect();
            let lo = elevations.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = elevations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let channels = self
                .lidar
                .elevation_channels_deg
                .iter()
                .filter(|e| (lo..=hi).contains(*e))
                .count();
            if channels < 3 {
                return bad(format!("board {i} is crossed by only {channels} LiDAR channels"));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> SceneTruth {
        SceneTruth {
            frame_convention: FRAME_CONVENTION.to_string(),
            camera: self.camera_truth,
            lidar_to_camera: self.lidar_to_camera_truth,
            board_specs: self.boards.iter().map(|b| b.spec.clone()).collect(),
            board_to_lidar: self.boards.iter().map(|b| b.board_to_lidar).collect(),
            board_to_camera: (0..self.boards.len()).map(|i| self.board_to_camera(i)).collect(),
            circle_centers_lidar: self
                .boards
                .iter()
                .map(|b| b.spec.circle_centers().map(|c| b.board_to_lidar.apply(&c)))
                .collect(),
            image_width: self.image_width,
            image_height: self.image_height,
        }
    }
}

fn outline_corners(spec: &BoardSpec) -> [Vec3; 4] {
    let (w, h) = (0.5 * spec.board_width, 0.5 * spec.board_height);
    [Vec3::new(-w, -h, 0.0), Vec3::new(w, -h, 0.0), Vec3::new(w, h, 0.0), Vec3::new(-w, h, 0.0)]
}

/// Projects every corner of every board through the true camera and adds
/// isotropic pixel noise. Corners landing outside the image are dropped.
pub fn simulate_corners(scene: &SceneSpec, frame: usize) -> Result<Vec<BoardCorners>, SimError> {
    let mut rng = stream_rng(scene.seed, frame, CORNER_STREAM);
    let noise = gaussian(scene.corner_noise_px);
    let (w, h) = (scene.image_width as f64, scene.image_height as f64);
    let mut out = Vec::with_capacity(scene.boards.len());
    for (b, placed) in scene.boards.iter().enumerate() {
        let pose = scene.board_to_camera(b);
        let mut corners = Vec::new();
        let mut dropped = 0;
        for corner in placed.spec.corner_points() {
            // noise is drawn for every corner so dropping never shifts the stream
            let (du, dv) = match &noise {
                Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
                None => (0.0, 0.0),
            };
            let Ok(px) = scene.camera_truth.project(&pose, &corner) else {
                dropped += 1;
                continue;
            };
            let px = px + Vec2::new(du, dv);
            if px.x >= 0.0 && px.x < w && px.y >= 0.0 && px.y < h {
                corners.push(CornerObservation { board_point: corner, pixel: px });
            } else {
                dropped += 1;
            }
        }
        if corners.len() < 4 {
            return Err(SimError::BoardNotVisible { board: b, visible: corners.len() });
        }
        out.push(BoardCorners { board: b, corners, dropped });
    }
    Ok(out)
}

struct BoardHitter<'a> {
    spec: &'a BoardSpec,
    rotation: Matrix3<f64>,
    origin: Vec3,
    normal: Vec3,
}

impl BoardHitter<'_> {
    /// Range along the unit ray `dir` to a solid part of the board.
    fn hit(&self, dir: &Vec3) -> Option<(f64, f64)> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&self.origin) / denom;
        if t <= 0.0 || t > MAX_RANGE {
            return None;
        }
        let local = self.rotation.transpose() * (dir * t - self.origin);
        let p = local.xy();
        if !self.spec.contains(&p) || self.spec.in_hole(&p) {
            return None;
        }
        Some((t, self.spec.intensity_at(&p)))
    }
}

/// Ray-casts the scene from the LiDAR origin. Rays through a hole continue
/// to whatever lies behind it; range noise is applied along the ray.
pub fn simulate_lidar(scene: &SceneSpec, frame: usize) -> Vec<LidarPoint> {
    let mut rng = stream_rng(scene.seed, frame, LIDAR_STREAM);
    let noise = gaussian(scene.lidar.range_noise_sigma_m);
    let hitters: Vec<BoardHitter> = scene
        .boards
        .iter()
        .map(|b| {
            let rotation = b.board_to_lidar.rotation_matrix();
            BoardHitter {
                spec: &b.spec,
                rotation,
                origin: b.board_to_lidar.translation,
                normal: rotation.column(2).into_owned(),
            }
        })
        .collect();
    let n_az = (360.0 / scene.lidar.azimuth_resolution_deg).round().max(1.0) as usize;
    let mut cloud = Vec::new();
    for a in 0..n_az {
        let az = (a as f64 * scene.lidar.azimuth_resolution_deg).to_radians();
        for el in &scene.lidar.elevation_channels_deg {
            let el = el.to_radians();
            let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let mut best: Option<(f64, f64)> = None;
            for hitter in &hitters {
                if let Some(hit) = hitter.hit(&dir) {
                    if best.is_none_or(|b| hit.0 < b.0) {
                        best = Some(hit);
                    }
                }
            }
            if let Some(g) = &scene.ground {
                let denom = g.normal.dot(&dir);
                if denom.abs() > 1e-12 {
                    let t = -g.offset / denom;
                    if t > 0.0 && t < MAX_RANGE && best.is_none_or(|b| t < b.0) {
                        best = Some((t, 0.3));
                    }
                }
            }
            if let Some((range, intensity)) = best {
                let range = range + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                cloud.push(LidarPoint { position: dir * range, intensity });
            }
        }
    }
    cloud
}

pub fn simulate_frame(scene: &SceneSpec, frame: usize) -> Result<SimFrame, SimError> {
    scene.validate()?;
    let corner_obs = simulate_corners(scene, frame)?;
    let cloud = simulate_lidar(scene, frame);
    Ok(SimFrame { cloud, corner_obs, truth: scene.truth() })
}

/// Board pose in the camera frame with the printed face turned toward
/// `look_at`, then turned by `tilt` about the board x axis, `pan` about the
/// new y axis and `roll` in plane (radians).
pub fn board_facing(center: Vec3, look_at: Vec3, tilt: f64, pan: f64, roll: f64) -> Pose {
    let z = (look_at - center).normalize();
    let up = Vec3::new(0.0, -1.0, 0.0);
    let y = (up - z * up.dot(&z)).normalize();
    let x = y.cross(&z);
    let base = Matrix3::from_columns(&[x, y, z]);
    let local = rotation_from_rpy(tilt, pan, roll);
    Pose::from_matrix(&(base * local), center).expect("orthonormal frame")
}

/// Where to put one board of a rig scene, in camera terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardPlacement {
    /// Image column of the board center (pixels).
    pub u: f64,
    /// Camera-frame depth of the board center (m).
    pub depth: f64,
    /// Camera-frame y of the board center (m, positive down).
    pub height: f64,
    pub tilt_deg: f64,
    pub pan_deg: f64,
    pub roll_deg: f64,
}

/// Extrinsic of the reference rig: translation (0, 0.595, 2.5) m and
/// roll/pitch/yaw (−90°, 0°, 90°).
pub fn reference_extrinsic() -> Pose {
    Pose::from_matrix(
        &rotation_from_rpy((-90f64).to_radians(), 0.0, 90f64.to_radians()),
        Vec3::new(0.0, 0.595, 2.5),
    )
    .expect("valid rotation")
}

pub fn reference_camera() -> CameraModel {
    CameraModel::pinhole(1050.0, 1045.0, 958.0, 541.0).with_distortion([-0.08, 0.02, 0.0006, -0.0004])
}

/// Board layout of [`reference_scene`]: two rows of three boards with
/// alternating tilt and pan, none occluding another for either sensor.
pub const REFERENCE_PLACEMENTS: [BoardPlacement; 6] = [
    BoardPlacement { u: 180.0, depth: 6.0, height: 1.1, tilt_deg: 12.0, pan_deg: 0.0, roll_deg: 3.0 },
    BoardPlacement { u: 480.0, depth: 8.0, height: -0.4, tilt_deg: -10.0, pan_deg: 0.0, roll_deg: -2.0 },
    BoardPlacement { u: 790.0, depth: 6.5, height: 0.2, tilt_deg: 15.0, pan_deg: 0.0, roll_deg: 1.5 },
    BoardPlacement { u: 1120.0, depth: 7.0, height: 1.3, tilt_deg: -14.0, pan_deg: 0.0, roll_deg: -3.0 },
    BoardPlacement { u: 1440.0, depth: 8.0, height: -0.3, tilt_deg: 10.0, pan_deg: 0.0, roll_deg: 2.0 },
    BoardPlacement { u: 1740.0, depth: 6.0, height: 0.9, tilt_deg: -12.0, pan_deg: 0.0, roll_deg: -1.0 },
];

/// Rig scene with default boards at `placements`, each first turned to
/// face a point between the two sensors.
pub fn rig_scene(
    camera: CameraModel,
    lidar_to_camera: Pose,
    placements: &[BoardPlacement],
    corner_noise_px: f64,
    range_noise_sigma_m: f64,
    seed: u64,
) -> SceneSpec {
    let camera_to_lidar = lidar_to_camera.inverse();
    let look_at = Vec3::new(0.0, 0.3, 1.25);
    let boards = placements
        .iter()
        .map(|p| {
            let x = (p.u - camera.cx) / camera.fx * p.depth;
            let to_cam = board_facing(
                Vec3::new(x, p.height, p.depth),
                look_at,
                p.tilt_deg.to_radians(),
                p.pan_deg.to_radians(),
                p.roll_deg.to_radians(),
            );
            PlacedBoard { spec: BoardSpec::default(), board_to_lidar: camera_to_lidar.compose(&to_cam) }
        })
        .collect();
    SceneSpec {
        camera_truth: camera,
        lidar_to_camera_truth: lidar_to_camera,
        boards,
        lidar: LidarSpec { range_noise_sigma_m, ..LidarSpec::default() },
        corner_noise_px,
        seed,
        image_width: 1920,
        image_height: 1080,
        frames: 1,
        ground: None,
    }
}

/// Six-board scene around the reference rig ([`reference_extrinsic`],
/// [`reference_camera`], [`REFERENCE_PLACEMENTS`]).
pub fn reference_scene(corner_noise_px: f64, range_noise_sigma_m: f64, seed: u64) -> SceneSpec {
    rig_scene(
        reference_camera(),
        reference_extrinsic(),
        &REFERENCE_PLACEMENTS,
        corner_noise_px,
        range_noise_sigma_m,
        seed,
    )
}
