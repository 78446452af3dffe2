//! The calibration target: a checkerboard in the middle of a rectangular
//! board with four circular holes around it.
//!
//! Board frame: origin at the board center, x right, y up, z = 0 on the
//! board surface (the +z axis points out of the printed face).

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoardError {
    #[error("invalid board spec: {0}")]
    InvalidSpec(String),
    #[error("mask sample pitch {pitch} must lie in (0, hole radius {radius})")]
    InvalidPitch { pitch: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    /// Interior corners along y.
    pub checker_rows: u32,
    /// Interior corners along x.
    pub checker_cols: u32,
    #[serde(rename = "square_size_m")]
    pub square_size: f64,
    #[serde(rename = "hole_centers_m")]
    pub hole_centers: [[f64; 2]; 4],
    #[serde(rename = "hole_radius_m")]
    pub hole_radius: f64,
    #[serde(rename = "board_width_m")]
    pub board_width: f64,
    #[serde(rename = "board_height_m")]
    pub board_height: f64,
}

impl Default for BoardSpec {
    fn default() -> Self {
        Self {
            checker_rows: 8,
            checker_cols: 6,
            square_size: 0.08,
            hole_centers: [[-0.42, 0.28], [0.42, 0.28], [-0.42, -0.28], [0.42, -0.28]],
            hole_radius: 0.11,
            board_width: 1.2,
            board_height: 0.9,
        }
    }
}

impl BoardSpec {
    /// Half extents of the printed checker squares (one square beyond the
    /// outermost interior corners on every side).
    pub fn checker_half_extent(&self) -> (f64, f64) {
        (
            0.5 * (self.checker_cols + 1) as f64 * self.square_size,
            0.5 * (self.checker_rows + 1) as f64 * self.square_size,
        )
    }

    pub fn validate(&self) -> Result<(), BoardError> {
        let bad = |msg: String| Err(BoardError::InvalidSpec(msg));
        let scalars = [self.square_size, self.hole_radius, self.board_width, self.board_height];
        if scalars.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return bad("sizes must be finite and positive".into());
        }
        if self.checker_rows < 2 || self.checker_cols < 2 {
            return bad("checkerboard needs at least 2x2 interior corners".into());
        }
        if self.hole_centers.iter().flatten().any(|v| !v.is_finite()) {
            return bad("hole centers must be finite".into());
        }
        let (hw, hh) = (0.5 * self.board_width, 0.5 * self.board_height);
        let (cw, ch) = self.checker_half_extent();
        if cw > hw || ch > hh {
            return bad("checkerboard does not fit on the board".into());
        }
        let r = self.hole_radius;
        for (i, [x, y]) in self.hole_centers.iter().copied().enumerate() {
            if x.abs() + r > hw || y.abs() + r > hh {
                return bad(format!("hole {i} is not fully inside the board outline"));
            }
            // distance from the hole center to the checker rectangle
            let dx = (x.abs() - cw).max(0.0);
            let dy = (y.abs() - ch).max(0.0);
            if (dx * dx + dy * dy).sqrt() < r {
                return bad(format!("hole {i} overlaps the checkerboard"));
            }
            for (j, [u, v]) in self.hole_centers.iter().copied().enumerate().skip(i + 1) {
                if ((x - u).powi(2) + (y - v).powi(2)).sqrt() < 2.0 * r {
                    return bad(format!("holes {i} and {j} overlap"));
                }
            }
        }
        let order = self.canonical_hole_order();
        let [tl, tr, bl, br] = order.map(|i| self.hole_centers[i]);
        if !(tl[1] > bl[1] && tr[1] > br[1]) {
            return bad("holes must form a top pair and a bottom pair".into());
        }
        Ok(())
    }

    /// Indices into `hole_centers` in top-left, top-right, bottom-left,
    /// bottom-right order.
    fn canonical_hole_order(&self) -> [usize; 4] {
        let mut idx = [0usize, 1, 2, 3];
        idx.sort_by(|&a, &b| self.hole_centers[b][1].total_cmp(&self.hole_centers[a][1]));
        let x = |i: usize| self.hole_centers[i][0];
        let (mut top, mut bottom) = ([idx[0], idx[1]], [idx[2], idx[3]]);
        top.sort_by(|&a, &b| x(a).total_cmp(&x(b)));
        bottom.sort_by(|&a, &b| x(a).total_cmp(&x(b)));
        [top[0], top[1], bottom[0], bottom[1]]
    }

    /// Interior checkerboard corners, row-major with x varying fastest,
    /// centered on the board origin.
    pub fn corner_points(&self) -> Vec<Vec3> {
        let rows = self.checker_rows as usize;
        let cols = self.checker_cols as usize;
        let x0 = 0.5 * (cols as f64 - 1.0);
        let y0 = 0.5 * (rows as f64 - 1.0);
        (0..rows)
            .flat_map(|i| {
                (0..cols).map(move |j| {
                    Vec3::new(
                        (j as f64 - x0) * self.square_size,
                        (i as f64 - y0) * self.square_size,
                        0.0,
                    )
                })
            })
            .collect()
    }

    /// Hole centers on the board plane in canonical order (TL, TR, BL, BR).
    pub fn circle_centers(&self) -> [Vec3; 4] {
        self.canonical_hole_order().map(|i| {
            let [x, y] = self.hole_centers[i];
            Vec3::new(x, y, 0.0)
        })
    }

    pub fn circle_centers_2d(&self) -> [Vec2; 4] {
        self.circle_centers().map(|c| c.xy())
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x.abs() <= 0.5 * self.board_width && p.y.abs() <= 0.5 * self.board_height
    }

    pub fn in_hole(&self, p: &Vec2) -> bool {
        let r2 = self.hole_radius * self.hole_radius;
        self.hole_centers
            .iter()
            .any(|[x, y]| (p.x - x).powi(2) + (p.y - y).powi(2) < r2)
    }

    /// Surface intensity at a board point: 1.0 white squares, 0.1 black,
    /// 0.5 off the printed pattern.
    pub fn intensity_at(&self, p: &Vec2) -> f64 {
        let (cw, ch) = self.checker_half_extent();
        if p.x.abs() >= cw || p.y.abs() >= ch {
            return 0.5;
        }
        let i = ((p.x + cw) / self.square_size).floor() as i64;
        let j = ((p.y + ch) / self.square_size).floor() as i64;
        if (i + j).rem_euclid(2) == 0 {
            0.1
        } else {
            1.0
        }
    }

    pub fn make_mask(&self, sample_pitch: f64) -> Result<MaskCloud, BoardError> {
        MaskCloud::from_outline(
            self.board_width,
            self.board_height,
            &self.circle_centers_2d(),
            self.hole_radius,
            sample_pitch,
        )
    }
}

/// A synthetic planar sampling of the board with the holes cut out.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCloud {
    pub points: Vec<Vec3>,
    pub sample_pitch: f64,
    pub hole_centers: Vec<Vec2>,
    pub hole_radius: f64,
}

impl MaskCloud {
    /// Samples a `width × height` rectangle centered on the origin on a
    /// regular grid of `⌈w/pitch⌉ × ⌈h/pitch⌉` nodes and drops every node
    /// within `hole_radius` of a hole center.
    pub fn from_outline(
        width: f64,
        height: f64,
        hole_centers: &[Vec2],
        hole_radius: f64,
        sample_pitch: f64,
    ) -> Result<Self, BoardError> {
        let pitch_ok = sample_pitch.is_finite()
            && sample_pitch > 0.0
            && (hole_centers.is_empty() || sample_pitch < hole_radius);
        if !pitch_ok {
            return Err(BoardError::InvalidPitch { pitch: sample_pitch, radius: hole_radius });
        }
        let nx = (width / sample_pitch).ceil() as usize;
        let ny = (height / sample_pitch).ceil() as usize;
        let x0 = -0.5 * (nx as f64 - 1.0) * sample_pitch;
        let y0 = -0.5 * (ny as f64 - 1.0) * sample_pitch;
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let p = Vector2::new(x0 + i as f64 * sample_pitch, y0 + j as f64 * sample_pitch);
                if hole_centers.iter().all(|c| (p - c).norm() > hole_radius) {
                    points.push(Vec3::new(p.x, p.y, 0.0));
                }
            }
        }
        Ok(Self {
            points,
            sample_pitch,
            hole_centers: hole_centers.to_vec(),
            hole_radius,
        })
    }

    /// Average number of mask samples in the one-pitch-wide ring just
    /// outside a hole.
    pub fn ring_point_count(&self) -> usize {
        if self.hole_centers.is_empty() {
            return 0;
        }
        let outer = self.hole_radius + self.sample_pitch;
        let total: usize = self
            .hole_centers
            .iter()
            .map(|c| {
                self.points
                    .iter()
                    .filter(|p| (p.xy() - c).norm() < outer)
                    .count()
            })
            .sum();
        total / self.hole_centers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> BoardSpec {
        BoardSpec {
            checker_rows: 2,
            checker_cols: 2,
            square_size: 0.1,
            hole_centers: [[0.35, -0.25], [-0.35, 0.25], [0.35, 0.25], [-0.35, -0.25]],
            hole_radius: 0.08,
            board_width: 1.0,
            board_height: 0.7,
        }
    }

    #[test]
    fn default_spec_is_valid() {
        BoardSpec::default().validate().unwrap();
        small_spec().validate().unwrap();
    }

    #[test]
    fn rejects_overlapping_or_escaping_holes() {
        let mut s = BoardSpec::default();
        s.hole_radius = 0.2;
        assert!(s.validate().is_err());
        let mut s = BoardSpec::default();
        s.checker_cols = 8;
        s.checker_rows = 6;
        // 9 x 7 squares of 8 cm reach x = ±0.36, within 0.11 m of the holes
        assert!(s.validate().is_err());
        let mut s = BoardSpec::default();
        s.hole_centers[0] = [-0.55, 0.28];
        assert!(s.validate().is_err());
    }

    #[test]
    fn two_by_two_corners() {
        let c = small_spec().corner_points();
        let expected = [(-0.05, -0.05), (0.05, -0.05), (-0.05, 0.05), (0.05, 0.05)];
        assert_eq!(c.len(), 4);
        for (p, (x, y)) in c.iter().zip(expected) {
            assert!((p - Vec3::new(x, y, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn corners_count_and_centroid() {
        let s = BoardSpec::default();
        let c = s.corner_points();
        assert_eq!(c.len(), (s.checker_rows * s.checker_cols) as usize);
        let mean = c.iter().sum::<Vec3>() / c.len() as f64;
        assert!(mean.norm() < 1e-15);
    }

    #[test]
    fn circle_centers_in_canonical_order() {
        let c = small_spec().circle_centers();
        let expected = [(-0.35, 0.25), (0.35, 0.25), (-0.35, -0.25), (0.35, -0.25)];
        for (p, (x, y)) in c.iter().zip(expected) {
            assert_eq!(*p, Vec3::new(x, y, 0.0));
        }
    }

    #[test]
    fn json_round_trip_keeps_centers_and_field_names() {
        let s = small_spec();
        let text = serde_json::to_string(&s).unwrap();
        for key in [
            "checker_rows",
            "checker_cols",
            "square_size_m",
            "hole_centers_m",
            "hole_radius_m",
            "board_width_m",
            "board_height_m",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
        let back: BoardSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.circle_centers(), s.circle_centers());
    }

    #[test]
    fn mask_without_holes_is_full_grid() {
        let m = MaskCloud::from_outline(1.2, 0.9, &[], 0.1, 0.05).unwrap();
        assert_eq!(m.points.len(), 24 * 18);
        let m = MaskCloud::from_outline(1.0, 0.7, &[], 0.1, 0.3).unwrap();
        assert_eq!(m.points.len(), 4 * 3);
        assert!(m.points.iter().all(|p| p.x.abs() <= 0.5 && p.y.abs() <= 0.35));
    }

    #[test]
    fn mask_excludes_hole_interiors() {
        let s = BoardSpec::default();
        let m = s.make_mask(0.01).unwrap();
        for p in &m.points {
            for c in s.circle_centers() {
                assert!((p - c).norm() > s.hole_radius);
            }
            assert!(s.contains(&p.xy()));
        }
    }

    #[test]
    fn halving_pitch_roughly_quadruples_count() {
        let s = BoardSpec::default();
        let a = s.make_mask(0.02).unwrap().points.len() as f64;
        let b = s.make_mask(0.01).unwrap().points.len() as f64;
        assert!((b / a - 4.0).abs() < 0.1, "ratio {}", b / a);
    }

    #[test]
    fn invalid_pitch() {
        let s = BoardSpec::default();
        assert!(matches!(s.make_mask(0.0), Err(BoardError::InvalidPitch { .. })));
        assert!(matches!(s.make_mask(0.2), Err(BoardError::InvalidPitch { .. })));
    }

    #[test]
    fn intensity_pattern() {
        let s = BoardSpec::default();
        assert_eq!(s.intensity_at(&Vec2::new(0.55, 0.0)), 0.5);
        let a = s.intensity_at(&Vec2::new(0.01, 0.01));
        let b = s.intensity_at(&Vec2::new(0.09, 0.01));
        assert!(a != b && [0.1, 1.0].contains(&a) && [0.1, 1.0].contains(&b));
    }
}
