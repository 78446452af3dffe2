//! Locating the four hole centers of each board in a LiDAR scan.
//!
//! Per board: crop the cloud to a preset region of interest, fit the board
//! plane with orientation-constrained RANSAC, then slide the board's hole
//! pattern over the in-plane points. The pattern placement with the fewest
//! points inside its holes wins; a coarse grid over (yaw, x, y) is followed
//! by local refinement rounds with halved steps. Only point coordinates are
//! used, never intensity or ring ids.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Rotation2, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{BoardError, BoardSpec, MaskCloud};
use crate::geometry::{Pose, Vec2, Vec3};
use crate::simulate::LidarPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("region of interest holds {count} points (need {required})")]
    EmptyRoi { count: usize, required: usize },
    #[error("plane fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("no plane within the orientation constraint (best inlier ratio {ratio:.3})")]
    NoValidPlane { ratio: f64 },
    #[error("target has {points} points, need at least {required}")]
    DegenerateTarget { points: usize, required: usize },
    #[error("regions of interest of boards {0} and {1} overlap")]
    OverlappingRoi(usize, usize),
    #[error("invalid detection parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Board(#[from] BoardError),
}

/// Axis-aligned box in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains_strictly(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub yaw_range_deg: f64,
    pub yaw_step_deg: f64,
    pub xy_range_m: f64,
    pub xy_step_m: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { yaw_range_deg: 10.0, yaw_step_deg: 2.0, xy_range_m: 0.1, xy_step_m: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub roi: Aabb,
    #[serde(default = "defaults::ransac_iters")]
    pub ransac_iters: usize,
    #[serde(default = "defaults::ransac_inlier_thresh")]
    pub ransac_inlier_thresh: f64,
    /// Rough board normal in the LiDAR frame (sign ignored).
    pub expected_normal: Vec3,
    #[serde(default = "defaults::max_normal_angle_deg")]
    pub max_normal_angle_deg: f64,
    /// Direction of the board's +y axis in the LiDAR frame, roughly. Fixes
    /// the in-plane orientation and therefore the hole labelling.
    pub up_hint: Vec3,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default = "defaults::refine_levels")]
    pub refine_levels: usize,
    #[serde(default = "defaults::mask_pitch")]
    pub mask_pitch: f64,
    /// Replace the grid optimum by the centroid of the minimum-cost region
    /// around it (see [`center_on_plateau`]).
    #[serde(default = "defaults::plateau_centering")]
    pub plateau_centering: bool,
    #[serde(default = "defaults::min_roi_points")]
    pub min_roi_points: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn ransac_iters() -> usize {
        500
    }
    pub fn ransac_inlier_thresh() -> f64 {
        0.012
    }
    pub fn max_normal_angle_deg() -> f64 {
        30.0
    }
    pub fn refine_levels() -> usize {
        3
    }
    pub fn mask_pitch() -> f64 {
        0.01
    }
    pub fn plateau_centering() -> bool {
        true
    }
    pub fn min_roi_points() -> usize {
        100
    }
}

impl DetectionParams {
    /// Parameters with default settings around a nominal board placement:
    /// the ROI is the bounding box of the board outline grown by `margin`.
    pub fn around_board(spec: &BoardSpec, board_to_lidar: &Pose, up_hint: Vec3, margin: f64) -> Self {
        let (w, h) = (0.5 * spec.board_width, 0.5 * spec.board_height);
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for (x, y) in [(-w, -h), (w, -h), (w, h), (-w, h)] {
            let p = board_to_lidar.apply(&Vec3::new(x, y, 0.0));
            min = min.inf(&p);
            max = max.sup(&p);
        }
        let normal = board_to_lidar.rotation_matrix().column(2).into_owned();
        Self {
            roi: Aabb { min: min.add_scalar(-margin), max: max.add_scalar(margin) },
            ransac_iters: defaults::ransac_iters(),
            ransac_inlier_thresh: defaults::ransac_inlier_thresh(),
            expected_normal: normal,
            max_normal_angle_deg: defaults::max_normal_angle_deg(),
            up_hint,
            grid: GridParams::default(),
            refine_levels: defaults::refine_levels(),
            mask_pitch: defaults::mask_pitch(),
            plateau_centering: defaults::plateau_centering(),
            min_roi_points: defaults::min_roi_points(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: &str| Err(DetectError::InvalidParams(m.to_string()));
        let g = &self.grid;
        if !(g.yaw_step_deg > 0.0 && g.xy_step_m > 0.0) {
            return bad("grid steps must be positive");
        }
        if !(g.yaw_range_deg > 0.0 && g.xy_range_m > 0.0) {
            return bad("grid ranges must be positive");
        }
        if !(self.max_normal_angle_deg > 0.0 && self.max_normal_angle_deg <= 90.0) {
            return bad("max normal angle must lie in (0, 90] degrees");
        }
        if !(self.ransac_inlier_thresh > 0.0) || self.ransac_iters == 0 {
            return bad("RANSAC needs a positive threshold and iteration count");
        }
        if self.expected_normal.norm() < 1e-9 || self.up_hint.norm() < 1e-9 {
            return bad("expected normal and up hint must be non-zero");
        }
        Ok(())
    }
}

/// Plane `normal · p + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub d: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.d
    }
}

/// Result of the hole-pattern search: the pattern is placed at
/// `R(yaw) * (h + (x, y))` in the plane frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub yaw: f64,
    pub x: f64,
    pub y: f64,
    pub cost: usize,
}

impl Alignment {
    fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.yaw)
    }

    /// Where a board-frame 2D point lands in the plane frame.
    pub fn place(&self, h: &Vec2) -> Vec2 {
        self.rotation() * (h + Vec2::new(self.x, self.y))
    }
}

/// In-plane coordinate frame on a fitted plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub normal: Vec3,
}

impl PlaneFrame {
    /// Frame with `normal` as z, y along the projection of `up_hint`, and the
    /// origin at the projection of `anchor` onto the plane.
    pub fn new(plane: &Plane, anchor: &Vec3, up_hint: &Vec3) -> Result<Self, DetectError> {
        let n = plane.normal;
        let up = up_hint - n * up_hint.dot(&n);
        if up.norm() < 1e-6 {
            return Err(DetectError::InvalidParams("up hint is parallel to the board normal".into()));
        }
        let y_axis = up.normalize();
        let x_axis = y_axis.cross(&n);
        Ok(Self { origin: anchor - n * plane.distance(anchor), x_axis, y_axis, normal: n })
    }

    pub fn to_plane(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.x_axis), d.dot(&self.y_axis))
    }

    pub fn lift(&self, q: &Vec2) -> Vec3 {
        self.origin + self.x_axis * q.x + self.y_axis * q.y
    }

    /// Board→LiDAR pose implied by an alignment in this frame.
    pub fn board_pose(&self, a: &Alignment) -> Pose {
        let (s, c) = a.yaw.sin_cos();
        let bx = self.x_axis * c + self.y_axis * s;
        let by = self.y_axis * c - self.x_axis * s;
        let rotation = Matrix3::from_columns(&[bx, by, self.normal]);
        let origin = self.lift(&a.place(&Vec2::zeros()));
        Pose::from_matrix(&rotation, origin).expect("orthonormal plane frame")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardDetection {
    pub plane: Plane,
    pub board_pose_in_lidar: Pose,
    /// TL, TR, BL, BR in the LiDAR frame.
    pub circle_centers_3d: [Vec3; 4],
    pub alignment: Alignment,
    pub alignment_cost: usize,
    pub inlier_count: usize,
}

pub fn roi_filter(cloud: &[LidarPoint], params: &DetectionParams) -> Result<Vec<Vec3>, DetectError> {
    let inside: Vec<Vec3> = cloud
        .iter()
        .map(|p| p.position)
        .filter(|p| params.roi.contains_strictly(p))
        .collect();
    if inside.len() < params.min_roi_points {
        return Err(DetectError::EmptyRoi { count: inside.len(), required: params.min_roi_points });
    }
    Ok(inside)
}

/// Total-least-squares plane through `points`.
pub fn fit_plane(points: &[Vec3]) -> Result<Plane, DetectError> {
    if points.len() < 3 {
        return Err(DetectError::TooFewPoints(points.len()));
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let normal: Vec3 = eig.eigenvectors.column(i).normalize();
    Ok(Plane { normal, d: -normal.dot(&centroid) })
}

/// RANSAC over random point triples whose plane normal lies within the
/// configured angle of the expected normal, followed by a least-squares
/// refit on the winning inliers. The normal is oriented toward the sensor.
pub fn ransac_plane(points: &[Vec3], params: &DetectionParams) -> Result<(Plane, Vec<Vec3>), DetectError> {
    if points.len() < 3 {
        return Err(DetectError::TooFewPoints(points.len()));
    }
    let expected = params.expected_normal.normalize();
    let min_cos = params.max_normal_angle_deg.to_radians().cos();
    let thresh = params.ransac_inlier_thresh;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..params.ransac_iters {
        let idx = sample(&mut rng, points.len(), 3);
        let (a, b, c) = (points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]);
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm < 1e-12 {
            continue;
        }
        let n = n / norm;
        if n.dot(&expected).abs() < min_cos {
            continue;
        }
        let plane = Plane { normal: n, d: -n.dot(&a) };
        let count = points.iter().filter(|p| plane.distance(p).abs() < thresh).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, plane));
        }
    }

    let ratio = best.as_ref().map_or(0.0, |(c, _)| *c as f64 / points.len() as f64);
    let Some((_, hypothesis)) = best.filter(|_| ratio >= 0.5) else {
        return Err(DetectError::NoValidPlane { ratio });
    };
    let inliers: Vec<Vec3> = points
        .iter()
        .copied()
        .filter(|p| hypothesis.distance(p).abs() < thresh)
        .collect();
    let mut plane = fit_plane(&inliers)?;
    // face the sensor at the origin
    if plane.d < 0.0 {
        plane = Plane { normal: -plane.normal, d: -plane.d };
    }
    Ok((plane, inliers))
}

/// Number of target points strictly inside any hole disc of the pattern
/// placed by `(yaw, x, y)`.
pub fn hole_occupancy(target: &[Vec2], mask: &MaskCloud, yaw: f64, x: f64, y: f64) -> usize {
    let a = Alignment { yaw, x, y, cost: 0 };
    let centers: Vec<Vec2> = mask.hole_centers.iter().map(|h| a.place(h)).collect();
    let centers = centers.as_slice();
    let r2 = mask.hole_radius * mask.hole_radius;
    target
        .iter()
        .filter(|q| centers.iter().any(|c| (*q - c).norm_squared() < r2))
        .count()
}

/// Outcome of the coarse grid and each refinement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub coarse: Alignment,
    pub levels: Vec<Alignment>,
}

impl GridSearch {
    pub fn best(&self) -> Alignment {
        *self.levels.last().unwrap_or(&self.coarse)
    }
}

/// Ordering used to pick the winner among grid cells: lowest cost, then
/// smallest in-plane offset, then smallest |yaw|, then enumeration order.
fn cell_order(a: &(Alignment, usize), b: &(Alignment, usize)) -> Ordering {
    a.0.cost
        .cmp(&b.0.cost)
        .then_with(|| a.0.x.hypot(a.0.y).total_cmp(&b.0.x.hypot(b.0.y)))
        .then_with(|| a.0.yaw.abs().total_cmp(&b.0.yaw.abs()))
        .then_with(|| a.1.cmp(&b.1))
}

/// Evaluates every cell `center + (i·yaw_step, j·xy_step, k·xy_step)` with
/// `|i| <= yaw_half`, `|j|, |k| <= xy_half`, in parallel, and reduces with
/// [`cell_order`] so the result does not depend on scheduling.
fn search_grid(
    target: &[Vec2],
    mask: &MaskCloud,
    center: (f64, f64, f64),
    yaw_step: f64,
    yaw_half: i64,
    xy_step: f64,
    xy_half: i64,
) -> Alignment {
    let ny = 2 * yaw_half + 1;
    let nxy = 2 * xy_half + 1;
    let total = (ny * nxy * nxy) as usize;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let i = idx as i64;
            let (iy, rest) = (i / (nxy * nxy), i % (nxy * nxy));
            let (ix, iz) = (rest / nxy, rest % nxy);
            let yaw = center.0 + (iy - yaw_half) as f64 * yaw_step;
            let x = center.1 + (ix - xy_half) as f64 * xy_step;
            let y = center.2 + (iz - xy_half) as f64 * xy_step;
            (Alignment { yaw, x, y, cost: hole_occupancy(target, mask, yaw, x, y) }, idx)
        })
        .min_by(cell_order)
        .map(|(a, _)| a)
        .expect("grid is never empty")
}

/// Coarse-to-fine minimization of [`hole_occupancy`] over (yaw, x, y).
///
/// The coarse grid spans `±range` with the configured steps. Each of the
/// `refine_levels` rounds halves the steps and searches `±2` previous steps
/// around the current best, which is itself a cell of the new grid, so the
/// cost never increases from one round to the next.
pub fn grid_search_align(
    target: &[Vec2],
    mask: &MaskCloud,
    grid: &GridParams,
    refine_levels: usize,
) -> Result<GridSearch, DetectError> {
    let required = 4 * mask.ring_point_count();
    if target.len() < required.max(3) {
        return Err(DetectError::DegenerateTarget { points: target.len(), required });
    }
    let mut yaw_step = grid.yaw_step_deg.to_radians();
    let mut xy_step = grid.xy_step_m;
    let yaw_half = (grid.yaw_range_deg / grid.yaw_step_deg).round() as i64;
    let xy_half = (grid.xy_range_m / grid.xy_step_m).round() as i64;

    let coarse = search_grid(target, mask, (0.0, 0.0, 0.0), yaw_step, yaw_half, xy_step, xy_half);
    let mut best = coarse;
    let mut levels = Vec::with_capacity(refine_levels);
    for _ in 0..refine_levels {
        yaw_step *= 0.5;
        xy_step *= 0.5;
        best = search_grid(target, mask, (best.yaw, best.x, best.y), yaw_step, 4, xy_step, 4);
        levels.push(best);
    }
    Ok(GridSearch { coarse, levels })
}

/// Sparse scans leave a whole region of placements with the minimum
/// count. This samples the neighbourhood of `best` on a grid with the given
/// steps (`±yaw_half`, `±xy_half` cells), recentres once on the centroid of
/// the minimum-cost cells and returns the centroid of the second pass. The
/// grid optimum is kept when the centroid itself costs more.
pub fn center_on_plateau(
    target: &[Vec2],
    mask: &MaskCloud,
    best: Alignment,
    yaw_step: f64,
    yaw_half: i64,
    xy_step: f64,
    xy_half: i64,
) -> Alignment {
    let ny = 2 * yaw_half + 1;
    let nxy = 2 * xy_half + 1;
    let mut center = best;
    for _ in 0..2 {
        let cells: Vec<(f64, f64, f64, usize)> = (0..ny * nxy * nxy)
            .into_par_iter()
            .map(|i| {
                let (iy, rest) = (i / (nxy * nxy), i % (nxy * nxy));
                let (ix, iz) = (rest / nxy, rest % nxy);
                let yaw = center.yaw + (iy - yaw_half) as f64 * yaw_step;
                let x = center.x + (ix - xy_half) as f64 * xy_step;
                let y = center.y + (iz - xy_half) as f64 * xy_step;
                (yaw, x, y, hole_occupancy(target, mask, yaw, x, y))
            })
            .collect();
        let min = cells.iter().map(|c| c.3).min().expect("non-empty grid");
        if min > best.cost {
            return best;
        }
        let (mut sy, mut sx, mut sz, mut n) = (0.0, 0.0, 0.0, 0.0);
        for c in cells.iter().filter(|c| c.3 == min) {
            sy += c.0;
            sx += c.1;
            sz += c.2;
            n += 1.0;
        }
        let (yaw, x, y) = (sy / n, sx / n, sz / n);
        center = Alignment { yaw, x, y, cost: hole_occupancy(target, mask, yaw, x, y) };
    }
    if center.cost > best.cost {
        best
    } else {
        center
    }
}

/// Hole centers of `spec` carried through the alignment into the LiDAR frame.
pub fn extract_circle_centers(alignment: &Alignment, spec: &BoardSpec, frame: &PlaneFrame) -> [Vec3; 4] {
    spec.circle_centers_2d().map(|h| frame.lift(&alignment.place(&h)))
}

/// Full chain for one board.
pub fn detect_board(
    cloud: &[LidarPoint],
    spec: &BoardSpec,
    params: &DetectionParams,
) -> Result<BoardDetection, DetectError> {
    params.validate()?;
    let roi = roi_filter(cloud, params)?;
    let (plane, inliers) = ransac_plane(&roi, params)?;
    let centroid = inliers.iter().sum::<Vec3>() / inliers.len() as f64;
    let frame = PlaneFrame::new(&plane, &centroid, &params.up_hint)?;
    let target: Vec<Vec2> = inliers.iter().map(|p| frame.to_plane(p)).collect();
    let mask = spec.make_mask(params.mask_pitch)?;
    let search = grid_search_align(&target, &mask, &params.grid, params.refine_levels)?;
    let mut alignment = search.best();
    if params.plateau_centering {
        let scale = 0.5f64.powi(params.refine_levels as i32);
        let yaw_step = params.grid.yaw_step_deg.to_radians() * scale;
        let xy_step = params.grid.xy_step_m * scale;
        alignment = center_on_plateau(&target, &mask, alignment, yaw_step, 6, xy_step, 12);
    }
    Ok(BoardDetection {
        plane,
        board_pose_in_lidar: frame.board_pose(&alignment),
        circle_centers_3d: extract_circle_centers(&alignment, spec, &frame),
        alignment,
        alignment_cost: alignment.cost,
        inlier_count: inliers.len(),
    })
}

/// Runs [`detect_board`] for every board. A failing board does not stop
/// the others; results come back in input order.
pub fn detect_boards(
    cloud: &[LidarPoint],
    boards: &[(BoardSpec, DetectionParams)],
) -> Result<Vec<Result<BoardDetection, DetectError>>, DetectError> {
    for i in 0..boards.len() {
        for j in i + 1..boards.len() {
            if boards[i].1.roi.intersects(&boards[j].1.roi) {
                return Err(DetectError::OverlappingRoi(i, j));
            }
        }
    }
    Ok(boards
        .par_iter()
        .map(|(spec, params)| detect_board(cloud, spec, params))
        .collect())
}
