//! Closed-form camera bootstrap from planar checkerboard views: per-view
//! homographies, intrinsics from the image of the absolute conic, then a
//! board pose per view. Distortion is left at zero.

use nalgebra::{DMatrix, Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::BoardSpec;
use crate::geometry::{CameraModel, GeometryError, Pose, Vec2, Vec3};
use crate::simulate::CornerObservation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("board orientations are too similar to constrain the intrinsics")]
    DegenerateMotion,
    #[error("conic estimate is not positive definite")]
    NotPositiveDefinite,
    #[error("no sign choice puts the board in front of the camera")]
    BehindCamera,
    #[error("need at least {need} views, got {got}")]
    InsufficientViews { got: usize, need: usize },
    #[error("view {view}: {source}")]
    View {
        view: usize,
        #[source]
        source: Box<InitError>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn in_view(view: usize) -> impl FnOnce(InitError) -> InitError {
    move |e| InitError::View { view, source: Box::new(e) }
}

/// Plane-to-image homography scaled so that `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn apply(&self, p: &Vec2) -> Vec2 {
        let q = self.0 * Vec3::new(p.x, p.y, 1.0);
        Vec2::new(q.x / q.z, q.y / q.z)
    }

    pub fn inverse(&self) -> Option<Homography> {
        let inv = self.0.try_inverse()?;
        (inv[(2, 2)].abs() > 1e-15).then(|| Homography(inv / inv[(2, 2)]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitResult {
    pub camera: CameraModel,
    /// Board→camera per view.
    pub board_poses: Vec<Pose>,
    pub corner_rms: Vec<f64>,
}

/// Similarity taking `pts` to zero centroid and mean distance √2.
fn hartley(pts: &[Vec2]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vec2>() / n;
    let mean = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn hom(m: &Matrix3<f64>, p: &Vec2) -> Vec2 {
    let q = m * Vec3::new(p.x, p.y, 1.0);
    Vec2::new(q.x / q.z, q.y / q.z)
}

/// Singular values and right singular vectors (as rows), sorted by
/// ascending singular value.
fn ascending_svd(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rows = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    (values, rows)
}

/// Normalized DLT from `(board xy, pixel)` correspondences.
pub fn estimate_homography(pairs: &[(Vec2, Vec2)]) -> Result<Homography, InitError> {
    if pairs.len() < 4 {
        return Err(InitError::DegenerateConfiguration(format!(
            "{} correspondences, need 4",
            pairs.len()
        )));
    }
    let src: Vec<Vec2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Vec2> = pairs.iter().map(|p| p.1).collect();
    let (ts, td) = (hartley(&src), hartley(&dst));

    // at least 9 rows so the SVD yields the full right basis
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (k, (s, d)) in src.iter().zip(&dst).enumerate() {
        let (x, y) = {
            let p = hom(&ts, s);
            (p.x, p.y)
        };
        let (u, v) = {
            let p = hom(&td, d);
            (p.x, p.y)
        };
        let r0 = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        let r1 = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let (sv, basis) = ascending_svd(a);
    if sv[1] <= 1e-10 * sv[8] {
        return Err(InitError::DegenerateConfiguration("correspondences are collinear".into()));
    }
    let h = basis.row(0);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().expect("similarity is invertible");
    let m = td_inv * hn * ts;
    if m[(2, 2)].abs() < 1e-15 {
        return Err(InitError::DegenerateConfiguration("h33 vanishes".into()));
    }
    let m = m / m[(2, 2)];
    if m.determinant().abs() <= 1e-12 {
        return Err(InitError::DegenerateConfiguration("singular homography".into()));
    }
    Ok(Homography(m))
}

/// Zhang's two orthogonality constraints per view on the symmetric
/// `B = K^-T K^-1`, with zero skew so the unknowns are
/// `(B11, B22, B13, B23, B33)`.
fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 5] {
    let (a, b) = (h.column(i), h.column(j));
    [
        a[0] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    ]
}

/// Intrinsics (skew 0, no distortion) from at least three homographies.
pub fn intrinsics_from_homographies(hs: &[Homography]) -> Result<CameraModel, InitError> {
    if hs.len() < 3 {
        return Err(InitError::InsufficientViews { got: hs.len(), need: 3 });
    }
    // condition the image side: shift to the mean board-origin image, scale
    // to pixel magnitude
    let origins: Vec<Vec2> = hs.iter().map(|h| h.apply(&Vec2::zeros())).collect();
    let c = origins.iter().sum::<Vec2>() / origins.len() as f64;
    let s = c.norm().max(1.0);
    let n = Matrix3::new(1.0 / s, 0.0, -c.x / s, 0.0, 1.0 / s, -c.y / s, 0.0, 0.0, 1.0);

    let mut v = DMatrix::zeros(2 * hs.len(), 5);
    for (k, h) in hs.iter().enumerate() {
        let h = n * h.0;
        let h = h / h.column(0).norm().max(h.column(1).norm());
        let r12 = conic_row(&h, 0, 1);
        let r11 = conic_row(&h, 0, 0);
        let r22 = conic_row(&h, 1, 1);
        for c in 0..5 {
            v[(2 * k, c)] = r12[c];
            v[(2 * k + 1, c)] = r11[c] - r22[c];
        }
    }
    let (sv, basis) = ascending_svd(v);
    if sv[1] <= 1e-9 * sv[sv.len() - 1] {
        return Err(InitError::DegenerateMotion);
    }
    let mut b: Vec<f64> = basis.row(0).iter().copied().collect();
    if b[0] < 0.0 {
        b.iter_mut().for_each(|x| *x = -*x);
    }
    let [b11, b22, b13, b23, b33] = [b[0], b[1], b[2], b[3], b[4]];
    if b11 <= 0.0 || b22 <= 0.0 {
        return Err(InitError::NotPositiveDefinite);
    }
    let lambda = b33 - b13 * b13 / b11 - b23 * b23 / b22;
    if lambda <= 0.0 {
        return Err(InitError::NotPositiveDefinite);
    }
    let (fx, fy) = ((lambda / b11).sqrt(), (lambda / b22).sqrt());
    let (cx, cy) = (-b13 / b11, -b23 / b22);
    // undo the conditioning: K = N^-1 K'
    Ok(CameraModel::pinhole(fx * s, fy * s, cx * s + c.x, cy * s + c.y))
}

/// Board→camera pose from a homography and known intrinsics.
pub fn pose_from_homography(h: &Homography, camera: &CameraModel) -> Result<Pose, InitError> {
    let k_inv = camera
        .k_matrix()
        .try_inverse()
        .ok_or_else(|| InitError::DegenerateConfiguration("singular K".into()))?;
    let m = k_inv * h.0;
    let scale = 2.0 / (m.column(0).norm() + m.column(1).norm());
    let mut t: Vec3 = m.column(2) * scale;
    let mut sign = 1.0;
    if t.z <= 0.0 {
        sign = -1.0;
        t = -t;
    }
    if t.z <= 0.0 {
        return Err(InitError::BehindCamera);
    }
    let r1: Vec3 = m.column(0) * (sign * scale);
    let r2: Vec3 = m.column(1) * (sign * scale);
    let q = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = q.svd(true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Ok(Pose::from_matrix(&r, t)?)
}

fn view_rms(camera: &CameraModel, pose: &Pose, corners: &[CornerObservation]) -> Result<f64, InitError> {
    let mut sq = 0.0;
    for c in corners {
        let pc = pose.apply(&c.board_point);
        if pc.z <= 0.0 {
            return Err(InitError::BehindCamera);
        }
        sq += (camera.project_camera_point(&pc)? - c.pixel).norm_squared();
    }
    Ok((sq / corners.len().max(1) as f64).sqrt())
}

/// Intrinsics and board poses from per-view corner lists. Board points
/// must lie on the board plane (z = 0) inside the printed checker area.
pub fn initialize(views: &[Vec<CornerObservation>], spec: &BoardSpec) -> Result<InitResult, InitError> {
    if views.len() < 3 {
        return Err(InitError::InsufficientViews { got: views.len(), need: 3 });
    }
    let (hx, hy) = spec.checker_half_extent();
    let homographies: Vec<Homography> = views
        .par_iter()
        .enumerate()
        .map(|(i, view)| {
            let off_board = view.iter().any(|c| {
                let p = c.board_point;
                p.z != 0.0 || p.x.abs() > hx + 1e-9 || p.y.abs() > hy + 1e-9
            });
            if off_board {
                return Err(in_view(i)(InitError::DegenerateConfiguration(
                    "board point outside the checker plane".into(),
                )));
            }
            let pairs: Vec<(Vec2, Vec2)> = view.iter().map(|c| (c.board_point.xy(), c.pixel)).collect();
            estimate_homography(&pairs).map_err(in_view(i))
        })
        .collect::<Result<_, _>>()?;
    let camera = intrinsics_from_homographies(&homographies)?;
    let mut board_poses = Vec::with_capacity(views.len());
    let mut corner_rms = Vec::with_capacity(views.len());
    for (i, (h, view)) in homographies.iter().zip(views).enumerate() {
        let pose = pose_from_homography(h, &camera).map_err(in_view(i))?;
        corner_rms.push(view_rms(&camera, &pose, view).map_err(in_view(i))?);
        board_poses.push(pose);
    }
    Ok(InitResult { camera, board_poses, corner_rms })
}
