//! Comparison of a calibration result against simulation truth, and the
//! report document every experiment command writes.

use jointcalib::geometry::{angle_axis_from_rotation, rpy_from_rotation, CameraModel, Pose};
use serde::{Deserialize, Serialize};

use crate::ablation::AblationReport;
use crate::consistency::ConsistencyReport;
use crate::error::{CliError, Stage};

/// Extrinsic error against truth. Angles in degrees, translations in
/// meters; `*_abs` are magnitudes of the signed deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicError {
    pub translation_delta: [f64; 3],
    pub translation_abs: [f64; 3],
    /// Result minus truth per Euler angle, wrapped to (-180, 180].
    pub rpy_delta_deg: [f64; 3],
    pub rpy_abs_deg: [f64; 3],
    /// Angle of the relative rotation between result and truth.
    pub geodesic_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicError {
    pub fx_rel: f64,
    pub fy_rel: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub dist_delta: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub frame_convention: String,
    #[serde(default)]
    pub extrinsic: Option<ExtrinsicError>,
    #[serde(default)]
    pub intrinsic: Option<IntrinsicError>,
    #[serde(default)]
    pub ablation: Option<AblationReport>,
    #[serde(default)]
    pub consistency: Option<ConsistencyReport>,
}

fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

pub fn check_convention(result: &str, truth: &str) -> Result<(), CliError> {
    if result != truth {
        return Err(CliError::new(
            Stage::Evaluate,
            "FrameConventionMismatch",
            &format!("result uses \"{result}\" but truth uses \"{truth}\""),
        ));
    }
    Ok(())
}

pub fn evaluate_extrinsic(result: &Pose, truth: &Pose) -> Result<ExtrinsicError, CliError> {
    let dt = result.translation - truth.translation;
    let (rr, rp, ry) = rpy_from_rotation(&result.rotation_matrix());
    let (tr, tp, ty) = rpy_from_rotation(&truth.rotation_matrix());
    let d = [rr - tr, rp - tp, ry - ty].map(|a| wrap_deg(a.to_degrees()));
    let relative = truth.rotation_matrix().transpose() * result.rotation_matrix();
    let geodesic = angle_axis_from_rotation(&relative)
        .map_err(|e| CliError::new(Stage::Evaluate, "Geometry", &e.to_string()))?
        .norm();
    Ok(ExtrinsicError {
        translation_delta: [dt.x, dt.y, dt.z],
        translation_abs: [dt.x.abs(), dt.y.abs(), dt.z.abs()],
        rpy_delta_deg: d,
        rpy_abs_deg: d.map(f64::abs),
        geodesic_deg: geodesic.to_degrees(),
    })
}

pub fn evaluate_intrinsic(result: &CameraModel, truth: &CameraModel) -> IntrinsicError {
    IntrinsicError {
        fx_rel: (result.fx - truth.fx) / truth.fx,
        fy_rel: (result.fy - truth.fy) / truth.fy,
        cx_px: result.cx - truth.cx,
        cy_px: result.cy - truth.cy,
        dist_delta: std::array::from_fn(|i| result.dist[i] - truth.dist[i]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use jointcalib::geometry::{rotation_from_rpy, Vec3};

    fn pose(t: [f64; 3], rpy_deg: [f64; 3]) -> Pose {
        let [r, p, y] = rpy_deg.map(f64::to_radians);
        Pose::from_matrix(&rotation_from_rpy(r, p, y), Vec3::from(t)).unwrap()
    }

    #[test]
    fn identical_poses_give_zero_error() {
        let p = pose([0.0, 0.595, 2.5], [-90.0, 0.0, 90.0]);
        let e = evaluate_extrinsic(&p, &p).unwrap();
        assert_eq!(e.translation_abs, [0.0; 3]);
        assert_abs_diff_eq!(e.geodesic_deg, 0.0, epsilon = 1e-12);
        for a in e.rpy_abs_deg {
            assert_abs_diff_eq!(a, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_shift_only() {
        let truth = pose([0.0, 0.595, 2.5], [-90.0, 0.0, 90.0]);
        let mut shifted = truth;
        shifted.translation.x += 0.001;
        let e = evaluate_extrinsic(&shifted, &truth).unwrap();
        assert_abs_diff_eq!(e.translation_abs[0], 0.001, epsilon = 1e-15);
        assert_eq!(e.translation_abs[1], 0.0);
        assert_eq!(e.geodesic_deg, 0.0);
    }

    #[test]
    fn table_pair_deltas() {
        let truth = pose([0.0, 0.595, 2.5], [-90.0, 0.0, 90.0]);
        let ours = pose([-0.001, 0.5912, 2.5079], [-90.002, 0.011, 90.004]);
        let e = evaluate_extrinsic(&ours, &truth).unwrap();
        for (got, want) in e.translation_abs.iter().zip([0.001, 0.0038, 0.0079]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        for (got, want) in e.rpy_abs_deg.iter().zip([0.002, 0.011, 0.004]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-9);
        }
        assert!(e.geodesic_deg > 0.011 && e.geodesic_deg < 0.002 + 0.011 + 0.004);
    }

    #[test]
    fn angles_wrap_across_the_seam() {
        assert_abs_diff_eq!(wrap_deg(359.0), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_deg(-181.0), 179.0, epsilon = 1e-12);
        assert_eq!(wrap_deg(-180.0), 180.0);
        let a = pose([0.0; 3], [0.0, 0.0, 179.5]);
        let b = pose([0.0; 3], [0.0, 0.0, -179.5]);
        let e = evaluate_extrinsic(&a, &b).unwrap();
        assert_abs_diff_eq!(e.rpy_delta_deg[2], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.geodesic_deg, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn convention_mismatch_is_reported() {
        let e = check_convention("a", "b").unwrap_err();
        assert_eq!(e.kind, "FrameConventionMismatch");
        assert_eq!(e.stage, Stage::Evaluate);
        assert!(check_convention("a", "a").is_ok());
    }

    #[test]
    fn report_round_trips() {
        let truth = pose([0.0, 0.595, 2.5], [-90.0, 0.0, 90.0]);
        let ours = pose([-0.001, 0.5912, 2.5079], [-90.002, 0.011, 90.004]);
        let report = EvalReport {
            frame_convention: "x".into(),
            extrinsic: Some(evaluate_extrinsic(&ours, &truth).unwrap()),
            intrinsic: Some(evaluate_intrinsic(
                &CameraModel::pinhole(1000.0, 1001.0, 640.0, 360.0),
                &CameraModel::pinhole(1001.0, 1000.0, 641.0, 359.0),
            )),
            ablation: None,
            consistency: None,
        };
        let text = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&text).unwrap(), report);
    }
}
