//! Joint refinement of intrinsics, distortion, board poses and the
//! LiDAR→camera transform by Levenberg–Marquardt.
//!
//! Three residual groups, all in pixels:
//!
//! * (a) LiDAR: hole centers measured in the LiDAR frame, mapped by the
//!   extrinsic and projected, against their image anchors;
//! * (b) corners: projected checker corners against detections;
//! * (c) anchors: hole centers projected through the board pose against the
//!   same anchors.
//!
//! Anchors are computed once from the initial camera and board poses
//! ([`compute_circle_centers_2d`]) and never move afterwards.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::BoardSpec;
use crate::geometry::{canonical, CameraModel, GeometryError, Mat3, Pose, Vec2, Vec3};
use crate::simulate::CornerObservation;

const CAMERA_PARAMS: usize = 8;
const EXTRINSIC: usize = CAMERA_PARAMS;
const FIRST_BOARD: usize = EXTRINSIC + 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("residuals not evaluable at the initial point: {0}")]
    Geometry(#[from] GeometryError),
    #[error("damping overflowed after {} iterations", .0.iterations)]
    Diverged(Box<OptimizeReport>),
    #[error("no convergence within {} iterations", .0.iterations)]
    NotConverged(Box<OptimizeReport>),
}

/// One hole center seen by both sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePair {
    /// Center measured in the LiDAR frame.
    pub lidar: Vec3,
    /// Image anchor in pixels.
    pub pixel: Vec2,
    /// Center in the board frame.
    pub board: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardPairs {
    /// Four entries in canonical hole order, or none for corner-only data.
    pub circles: Vec<CirclePair>,
    pub corners: Vec<CornerObservation>,
}

impl BoardPairs {
    pub fn new(spec: &BoardSpec, corners: Vec<CornerObservation>, lidar: [Vec3; 4], anchors: [Vec2; 4]) -> Self {
        let holes = spec.circle_centers();
        let circles = (0..4)
            .map(|i| CirclePair { lidar: lidar[i], pixel: anchors[i], board: holes[i] })
            .collect();
        Self { circles, corners }
    }

    pub fn corners_only(corners: Vec<CornerObservation>) -> Self {
        Self { circles: Vec::new(), corners }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPairSet {
    pub boards: Vec<BoardPairs>,
    pub image_width: u32,
    pub image_height: u32,
}

impl PointPairSet {
    fn validate(&self, groups: &ResidualGroups) -> Result<(), OptimizeError> {
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let inside = |p: &Vec2| p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h;
        for (i, b) in self.boards.iter().enumerate() {
            let mismatch = |m: String| Err(OptimizeError::DimensionMismatch(format!("board {i}: {m}")));
            if (groups.lidar || groups.anchor) && b.circles.len() != 4 {
                return mismatch(format!("{} circle pairs, need 4", b.circles.len()));
            }
            if groups.corner && b.corners.len() < 4 {
                return mismatch(format!("{} corners, need at least 4", b.corners.len()));
            }
            let pixels = b.circles.iter().map(|c| &c.pixel).chain(b.corners.iter().map(|c| &c.pixel));
            if let Some(p) = pixels.into_iter().find(|p| !inside(p)) {
                return mismatch(format!("pixel ({}, {}) outside the image", p.x, p.y));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBlock {
    pub camera: CameraModel,
    pub lidar_to_camera: Pose,
    /// Board→camera per board.
    pub board_poses: Vec<Pose>,
}

impl ParameterBlock {
    pub fn len(&self) -> usize {
        FIRST_BOARD + 6 * self.board_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[ln fx, ln fy, cx, cy, k1, k2, p1, p2, r_LC, t_LC, (r_b, t_b)...]`
    pub fn to_vector(&self) -> DVector<f64> {
        let c = &self.camera;
        let mut x = DVector::zeros(self.len());
        let head = [c.fx.ln(), c.fy.ln(), c.cx, c.cy, c.dist[0], c.dist[1], c.dist[2], c.dist[3]];
        x.rows_mut(0, CAMERA_PARAMS).copy_from_slice(&head);
        let mut put = |at: usize, p: &Pose| {
            x.fixed_rows_mut::<3>(at).copy_from(&p.rotation);
            x.fixed_rows_mut::<3>(at + 3).copy_from(&p.translation);
        };
        put(EXTRINSIC, &self.lidar_to_camera);
        for (i, p) in self.board_poses.iter().enumerate() {
            put(FIRST_BOARD + 6 * i, p);
        }
        x
    }

    /// Inverse of [`to_vector`](Self::to_vector); skew is taken from `self`.
    pub fn with_vector(&self, x: &DVector<f64>) -> ParameterBlock {
        let pose = |at: usize| Pose::new(x.fixed_rows::<3>(at).into(), x.fixed_rows::<3>(at + 3).into());
        ParameterBlock {
            camera: CameraModel {
                fx: x[0].exp(),
                fy: x[1].exp(),
                cx: x[2],
                cy: x[3],
                skew: self.camera.skew,
                dist: [x[4], x[5], x[6], x[7]],
            },
            lidar_to_camera: pose(EXTRINSIC),
            board_poses: (0..self.board_poses.len()).map(|i| pose(FIRST_BOARD + 6 * i)).collect(),
        }
    }

    fn canonicalized(mut self) -> Self {
        self.lidar_to_camera.rotation = canonical(self.lidar_to_camera.rotation);
        for p in &mut self.board_poses {
            p.rotation = canonical(p.rotation);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualGroups {
    pub lidar: bool,
    pub corner: bool,
    pub anchor: bool,
}

impl ResidualGroups {
    pub const ALL: Self = Self { lidar: true, corner: true, anchor: true };
}

impl Default for ResidualGroups {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParams {
    /// fx, fy, cx, cy
    pub intrinsics: bool,
    pub distortion: bool,
    pub extrinsic: bool,
    pub board_poses: bool,
}

impl FreeParams {
    pub const ALL: Self = Self { intrinsics: true, distortion: true, extrinsic: true, board_poses: true };
}

impl Default for FreeParams {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub w_lidar: f64,
    pub w_corner: f64,
    pub w_anchor: f64,
    pub max_iters: usize,
    pub lambda_init: f64,
    /// Max-norm of the gradient per unit of total weight.
    pub gradient_tol: f64,
    /// Relative step size.
    pub param_tol: f64,
    /// Relative cost decrease of an accepted step.
    pub cost_tol: f64,
    pub groups: ResidualGroups,
    pub free: FreeParams,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            w_lidar: 1.0,
            w_corner: 1.0,
            w_anchor: 1.0,
            max_iters: 100,
            lambda_init: 1e-3,
            gradient_tol: 1e-12,
            param_tol: 1e-14,
            cost_tol: 1e-15,
            groups: ResidualGroups::ALL,
            free: FreeParams::ALL,
        }
    }
}

impl OptimizeOptions {
    fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidOptions(m.into()));
        let w = [self.w_lidar, self.w_corner, self.w_anchor];
        if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("weights must be positive and finite");
        }
        if !(self.lambda_init > 0.0) {
            return bad("initial damping must be positive");
        }
        if !(self.groups.lidar || self.groups.corner || self.groups.anchor) {
            return bad("no residual group enabled");
        }
        Ok(())
    }

    fn total_weight(&self) -> f64 {
        self.w_lidar + self.w_corner + self.w_anchor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    CostChange,
    StepSize,
    MaxIterations,
    LambdaOverflow,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::Gradient => "gradient below tolerance",
            Termination::CostChange => "relative cost change below tolerance",
            Termination::StepSize => "step below tolerance",
            Termination::MaxIterations => "iteration limit reached",
            Termination::LambdaOverflow => "damping overflow",
        };
        f.write_str(s)
    }
}

/// Unweighted per-point RMS reprojection error of each group, in pixels.
/// `None` where the data has no entries for the group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRms {
    pub lidar: Option<f64>,
    pub corner: Option<f64>,
    pub anchor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub params: ParameterBlock,
    pub rms: GroupRms,
    /// Cost (half the weighted sum of squares) at the start and after every
    /// accepted step.
    pub trace: Vec<f64>,
    /// Index into `trace` where each stage begins; `[0]` for a single solve.
    pub stage_starts: Vec<usize>,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub reason: Termination,
}

/// Image positions of the four hole centers of a board seen at `board_pose`.
pub fn compute_circle_centers_2d(
    camera: &CameraModel,
    board_pose: &Pose,
    spec: &BoardSpec,
) -> Result<[Vec2; 4], GeometryError> {
    let r = board_pose.rotation_matrix();
    let mut out = [Vec2::zeros(); 4];
    for (o, h) in out.iter_mut().zip(spec.circle_centers()) {
        *o = camera.project_camera_point(&(r * h + board_pose.translation))?;
    }
    Ok(out)
}

struct Layout {
    lidar: Vec<usize>,
    corner: Vec<usize>,
    anchor: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(pairs: &PointPairSet, groups: &ResidualGroups) -> Self {
        let mut len = 0;
        let mut offsets = |on: bool, size: &dyn Fn(&BoardPairs) -> usize| -> Vec<usize> {
            pairs
                .boards
                .iter()
                .map(|b| {
                    let at = len;
                    if on {
                        len += size(b);
                    }
                    at
                })
                .collect()
        };
        let lidar = offsets(groups.lidar, &|b| 2 * b.circles.len());
        let corner = offsets(groups.corner, &|b| 2 * b.corners.len());
        let anchor = offsets(groups.anchor, &|b| 2 * b.circles.len());
        Self { lidar, corner, anchor, len }
    }
}

/// Which residual blocks an evaluation touches.
#[derive(Clone, Copy)]
struct Selection {
    board: Option<usize>,
    groups: ResidualGroups,
}

fn project_rt(camera: &CameraModel, r: &Mat3, t: &Vec3, p: &Vec3) -> Result<Vec2, GeometryError> {
    camera.project_camera_point(&(r * p + t))
}

fn write2(out: &mut DVector<f64>, at: usize, scale: f64, d: Vec2) {
    out[at] = scale * d.x;
    out[at + 1] = scale * d.y;
}

fn fill_residuals(
    params: &ParameterBlock,
    pairs: &PointPairSet,
    opts: &OptimizeOptions,
    layout: &Layout,
    sel: Selection,
    out: &mut DVector<f64>,
) -> Result<(), GeometryError> {
    let cam = &params.camera;
    let (sl, sc, sa) = (opts.w_lidar.sqrt(), opts.w_corner.sqrt(), opts.w_anchor.sqrt());
    let r_lc = params.lidar_to_camera.rotation_matrix();
    let t_lc = params.lidar_to_camera.translation;
    for (i, (b, pose)) in pairs.boards.iter().zip(&params.board_poses).enumerate() {
        if sel.board.is_some_and(|s| s != i) {
            continue;
        }
        if sel.groups.lidar {
            for (k, c) in b.circles.iter().enumerate() {
                let d = project_rt(cam, &r_lc, &t_lc, &c.lidar)? - c.pixel;
                write2(out, layout.lidar[i] + 2 * k, sl, d);
            }
        }
        if !(sel.groups.corner || sel.groups.anchor) {
            continue;
        }
        let r_bc = pose.rotation_matrix();
        if sel.groups.corner {
            for (k, c) in b.corners.iter().enumerate() {
                let d = project_rt(cam, &r_bc, &pose.translation, &c.board_point)? - c.pixel;
                write2(out, layout.corner[i] + 2 * k, sc, d);
            }
        }
        if sel.groups.anchor {
            for (k, c) in b.circles.iter().enumerate() {
                let d = project_rt(cam, &r_bc, &pose.translation, &c.board)? - c.pixel;
                write2(out, layout.anchor[i] + 2 * k, sa, d);
            }
        }
    }
    Ok(())
}

fn check_dims(params: &ParameterBlock, pairs: &PointPairSet, opts: &OptimizeOptions) -> Result<(), OptimizeError> {
    if params.board_poses.len() != pairs.boards.len() {
        return Err(OptimizeError::DimensionMismatch(format!(
            "{} board poses for {} boards",
            params.board_poses.len(),
            pairs.boards.len()
        )));
    }
    pairs.validate(&opts.groups)
}

/// Weighted residual vector: all of group (a), then (b), then (c), each
/// ordered by board. Disabled groups are left out.
pub fn build_residuals(
    params: &ParameterBlock,
    pairs: &PointPairSet,
    opts: &OptimizeOptions,
) -> Result<DVector<f64>, OptimizeError> {
    check_dims(params, pairs, opts)?;
    let layout = Layout::new(pairs, &opts.groups);
    let mut out = DVector::zeros(layout.len);
    fill_residuals(params, pairs, opts, &layout, Selection { board: None, groups: opts.groups }, &mut out)?;
    Ok(out)
}

/// Central-difference step for a parameter value.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-8)
}

/// Residual blocks that parameter `j` can influence.
fn column_selection(j: usize, groups: ResidualGroups) -> Selection {
    if j < EXTRINSIC {
        Selection { board: None, groups }
    } else if j < FIRST_BOARD {
        Selection { board: None, groups: ResidualGroups { lidar: groups.lidar, corner: false, anchor: false } }
    } else {
        Selection {
            board: Some((j - FIRST_BOARD) / 6),
            groups: ResidualGroups { lidar: false, corner: groups.corner, anchor: groups.anchor },
        }
    }
}

struct Problem<'a> {
    base: &'a ParameterBlock,
    pairs: &'a PointPairSet,
    opts: &'a OptimizeOptions,
    layout: Layout,
}

impl<'a> Problem<'a> {
    fn new(base: &'a ParameterBlock, pairs: &'a PointPairSet, opts: &'a OptimizeOptions) -> Self {
        Self { base, pairs, opts, layout: Layout::new(pairs, &opts.groups) }
    }

    fn eval(&self, x: &DVector<f64>, sel: Selection) -> Result<DVector<f64>, GeometryError> {
        let mut out = DVector::zeros(self.layout.len);
        fill_residuals(&self.base.with_vector(x), self.pairs, self.opts, &self.layout, sel, &mut out)?;
        Ok(out)
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.eval(x, Selection { board: None, groups: self.opts.groups })
    }

    /// Columns `cols` of the Jacobian. Only residual blocks a parameter can
    /// reach are re-evaluated; the rest of each column is exactly zero.
    fn jacobian(&self, x: &DVector<f64>, cols: &[usize]) -> Result<DMatrix<f64>, GeometryError> {
        let columns: Vec<DVector<f64>> = cols
            .par_iter()
            .map(|&j| {
                let sel = column_selection(j, self.opts.groups);
                let h = fd_step(x[j]);
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let rp = self.eval(&xp, sel)?;
                let rm = self.eval(&xm, sel)?;
                Ok((rp - rm) / (2.0 * h))
            })
            .collect::<Result<_, GeometryError>>()?;
        Ok(DMatrix::from_columns(&columns))
    }
}

/// Full Jacobian of [`build_residuals`] with respect to every entry of
/// [`ParameterBlock::to_vector`], by central differences.
pub fn numeric_jacobian(
    params: &ParameterBlock,
    pairs: &PointPairSet,
    opts: &OptimizeOptions,
) -> Result<DMatrix<f64>, OptimizeError> {
    check_dims(params, pairs, opts)?;
    let problem = Problem::new(params, pairs, opts);
    let cols: Vec<usize> = (0..params.len()).collect();
    Ok(problem.jacobian(&params.to_vector(), &cols)?)
}

fn free_columns(n: usize, free: &FreeParams) -> Vec<usize> {
    (0..n)
        .filter(|&j| match j {
            0..=3 => free.intrinsics,
            4..=7 => free.distortion,
            _ if j < FIRST_BOARD => free.extrinsic,
            _ => free.board_poses,
        })
        .collect()
}

/// RMS of each residual group at `params`, unweighted, whatever groups the
/// solve used.
pub fn group_rms(params: &ParameterBlock, pairs: &PointPairSet) -> Result<GroupRms, OptimizeError> {
    let opts = OptimizeOptions { groups: ResidualGroups::ALL, ..Default::default() };
    check_dims(params, &PointPairSet { boards: Vec::new(), ..pairs.clone() }, &opts).ok();
    if params.board_poses.len() != pairs.boards.len() {
        return Err(OptimizeError::DimensionMismatch("board count".into()));
    }
    let layout = Layout::new(pairs, &ResidualGroups::ALL);
    let mut r = DVector::zeros(layout.len);
    fill_residuals(params, pairs, &opts, &layout, Selection { board: None, groups: ResidualGroups::ALL }, &mut r)?;
    let n_circles: usize = pairs.boards.iter().map(|b| b.circles.len()).sum();
    let n_corners: usize = pairs.boards.iter().map(|b| b.corners.len()).sum();
    let rms = |from: usize, count: usize| {
        (count > 0).then(|| (r.rows(from, 2 * count).norm_squared() / count as f64).sqrt())
    };
    Ok(GroupRms {
        lidar: rms(0, n_circles),
        corner: rms(2 * n_circles, n_corners),
        anchor: rms(2 * (n_circles + n_corners), n_circles),
    })
}

/// `JᵀJ`, visiting only the nonzero rows of the sparser column of each
/// pair. Board-pose columns touch a few dozen rows out of thousands.
fn normal_matrix(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let n = jac.ncols();
    let nonzero: Vec<Vec<usize>> = (0..n)
        .map(|j| jac.column(j).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect())
        .collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (s, d) = if nonzero[i].len() <= nonzero[j].len() { (i, j) } else { (j, i) };
            let v: f64 = nonzero[s].iter().map(|&k| jac[(k, s)] * jac[(k, d)]).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Levenberg–Marquardt with Marquardt (diagonal) damping.
pub fn solve(
    initial: &ParameterBlock,
    pairs: &PointPairSet,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport, OptimizeError> {
    opts.validate()?;
    check_dims(initial, pairs, opts)?;
    if !initial.camera.fx.is_finite() || initial.camera.fx <= 0.0 || initial.camera.fy <= 0.0 {
        return Err(OptimizeError::InvalidOptions("initial focal lengths must be positive".into()));
    }
    let problem = Problem::new(initial, pairs, opts);
    let cols = free_columns(initial.len(), &opts.free);
    let mut x = initial.to_vector();
    let mut r = problem.residuals(&x)?;
    let mut cost = 0.5 * r.norm_squared();
    let mut trace = vec![cost];
    let mut lambda = opts.lambda_init;
    let wsum = opts.total_weight();

    let finish = |x: &DVector<f64>, trace: Vec<f64>, iterations: usize, reason: Termination| {
        let params = initial.with_vector(x).canonicalized();
        let rms = group_rms(&params, pairs)?;
        let final_cost = *trace.last().expect("trace starts with the initial cost");
        let converged = !matches!(reason, Termination::MaxIterations | Termination::LambdaOverflow);
        Ok::<_, OptimizeError>(OptimizeReport {
            params,
            rms,
            trace,
            stage_starts: vec![0],
            iterations,
            final_cost,
            converged,
            reason,
        })
    };

    if cols.is_empty() || r.is_empty() {
        return finish(&x, trace, 0, Termination::Gradient);
    }

    for iter in 0..opts.max_iters {
        if cost == 0.0 {
            return finish(&x, trace, iter, Termination::CostChange);
        }
        let jac = problem.jacobian(&x, &cols)?;
        let g = jac.tr_mul(&r);
        if g.amax() / wsum <= opts.gradient_tol {
            return finish(&x, trace, iter, Termination::Gradient);
        }
        let a = normal_matrix(&jac);
        let floor = 1e-12 * a.diagonal().amax().max(1e-300);
        loop {
            let mut m = a.clone();
            for k in 0..m.nrows() {
                m[(k, k)] += lambda * a[(k, k)].max(floor);
            }
            let step = m.cholesky().map(|c| -c.solve(&g));
            let Some(delta) = step.filter(|d| d.iter().all(|v| v.is_finite())) else {
                lambda *= 4.0;
                if lambda > 1e32 {
                    let report = finish(&x, trace, iter + 1, Termination::LambdaOverflow)?;
                    return Err(OptimizeError::Diverged(Box::new(report)));
                }
                continue;
            };
            let mut x_new = x.clone();
            for (k, &j) in cols.iter().enumerate() {
                x_new[j] += delta[k];
            }
            let small_step = delta.norm() <= opts.param_tol * (x.norm() + opts.param_tol);
            let trial = problem.residuals(&x_new).ok().map(|r| (0.5 * r.norm_squared(), r));
            match trial {
                Some((c_new, r_new)) if c_new < cost => {
                    let rel = (cost - c_new) / cost;
                    x = x_new;
                    r = r_new;
                    cost = c_new;
                    trace.push(cost);
                    lambda = (lambda * 0.5).max(1e-300);
                    if rel <= opts.cost_tol {
                        return finish(&x, trace, iter + 1, Termination::CostChange);
                    }
                    if small_step {
                        return finish(&x, trace, iter + 1, Termination::StepSize);
                    }
                    break;
                }
                _ => {
                    if small_step {
                        return finish(&x, trace, iter + 1, Termination::StepSize);
                    }
                    lambda *= 4.0;
                    if lambda > 1e32 {
                        let report = finish(&x, trace, iter + 1, Termination::LambdaOverflow)?;
                        return Err(OptimizeError::Diverged(Box::new(report)));
                    }
                }
            }
        }
    }
    let report = finish(&x, trace, opts.max_iters, Termination::MaxIterations)?;
    Err(OptimizeError::NotConverged(Box::new(report)))
}

/// Baseline that never lets the LiDAR data touch the camera: first the
/// camera and board poses are fitted to the corners alone, then only the
/// extrinsic is fitted to group (a).
pub fn solve_two_stage(
    initial: &ParameterBlock,
    pairs: &PointPairSet,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport, OptimizeError> {
    let stage1_opts = OptimizeOptions {
        groups: ResidualGroups { lidar: false, corner: true, anchor: false },
        free: FreeParams { extrinsic: false, ..opts.free },
        ..opts.clone()
    };
    let stage1 = solve(initial, pairs, &stage1_opts)?;
    let stage2_opts = OptimizeOptions {
        groups: ResidualGroups { lidar: true, corner: false, anchor: false },
        free: FreeParams { intrinsics: false, distortion: false, extrinsic: true, board_poses: false },
        ..opts.clone()
    };
    let stage2 = solve(&stage1.params, pairs, &stage2_opts)?;
    let mut trace = stage1.trace;
    let stage_starts = vec![0, trace.len()];
    trace.extend(&stage2.trace);
    Ok(OptimizeReport {
        trace,
        stage_starts,
        iterations: stage1.iterations + stage2.iterations,
        ..stage2
    })
}

/// Corner-only refinement of intrinsics, distortion and board poses.
pub fn refine_with_corners(
    camera: &CameraModel,
    board_poses: &[Pose],
    views: &[Vec<CornerObservation>],
    image_size: (u32, u32),
    opts: &OptimizeOptions,
) -> Result<OptimizeReport, OptimizeError> {
    let pairs = PointPairSet {
        boards: views.iter().map(|v| BoardPairs::corners_only(v.clone())).collect(),
        image_width: image_size.0,
        image_height: image_size.1,
    };
    let initial = ParameterBlock {
        camera: *camera,
        lidar_to_camera: Pose::identity(),
        board_poses: board_poses.to_vec(),
    };
    let opts = OptimizeOptions {
        groups: ResidualGroups { lidar: false, corner: true, anchor: false },
        free: FreeParams { extrinsic: false, ..opts.free },
        ..opts.clone()
    };
    solve(&initial, &pairs, &opts)
}

/// Least-squares rigid transform taking `source[i]` onto `target[i]`.
pub fn align_point_sets(source: &[Vec3], target: &[Vec3]) -> Result<Pose, OptimizeError> {
    if source.len() != target.len() || source.len() < 3 {
        return Err(OptimizeError::DimensionMismatch(format!(
            "{} source and {} target points, need at least 3 each",
            source.len(),
            target.len()
        )));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vec3>() / n;
    let ct = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    let sv = svd.singular_values;
    if sv.iter().filter(|s| **s > 1e-12 * sv.max().max(1e-300)).count() < 2 {
        return Err(OptimizeError::DimensionMismatch("points are collinear".into()));
    }
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    Ok(Pose::from_matrix(&r, ct - r * cs)?)
}
