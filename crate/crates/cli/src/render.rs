//! LiDAR-on-image overlays written as binary PPM.

use std::io::{BufRead, Write};

use jointcalib::geometry::{CameraModel, Pose, Vec2, Vec3};
use jointcalib::simulate::LidarPoint;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Jet,
    Gray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub point_radius_px: u32,
    pub colormap: Colormap,
    pub ring_radius_px: u32,
    pub cross_half_px: u32,
    pub ring_color: [u8; 3],
    pub cross_color: [u8; 3],
    /// Optional PPM drawn under the overlay instead of a black canvas.
    pub background: Option<std::path::PathBuf>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            point_radius_px: 1,
            colormap: Colormap::Jet,
            ring_radius_px: 7,
            cross_half_px: 5,
            ring_color: [255, 48, 48],
            cross_color: [255, 255, 255],
            background: None,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.ring_radius_px == 0 || self.cross_half_px == 0 {
            return Err(CliError::config("ring radius and cross size must be positive"));
        }
        Ok(())
    }
}

/// RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![0; width as usize * height as usize * 3] }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn disc(&mut self, center: Vec2, r: u32, c: [u8; 3]) {
        let (cx, cy) = (center.x.round() as i64, center.y.round() as i64);
        let r = r as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    /// One-pixel ring: cells whose center lies within half a pixel of the
    /// circle of radius `r`.
    fn ring(&mut self, center: Vec2, r: u32, c: [u8; 3]) {
        let (cx, cy) = (center.x.round() as i64, center.y.round() as i64);
        let r = r as i64;
        for dy in -r - 1..=r + 1 {
            for dx in -r - 1..=r + 1 {
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                if (d - r as f64).abs() <= 0.5 {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    fn cross(&mut self, center: Vec2, half: u32, c: [u8; 3]) {
        let (cx, cy) = (center.x.round() as i64, center.y.round() as i64);
        for d in -(half as i64)..=half as i64 {
            self.put(cx + d, cy, c);
            self.put(cx, cy + d, c);
        }
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }

    /// Reads a binary PPM with maxval 255.
    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Self, String> {
        let mut data = Vec::new();
        input.read_to_end(&mut data).map_err(|e| e.to_string())?;
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
                if data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err("only binary PPM with maxval 255 is supported".into());
        }
        let width: u32 = fields[1].parse().map_err(|_| "bad PPM width")?;
        let height: u32 = fields[2].parse().map_err(|_| "bad PPM height")?;
        let len = width as usize * height as usize * 3;
        if data.len() < pos + len {
            return Err("truncated PPM pixel data".into());
        }
        Ok(Self { width, height, pixels: data[pos..pos + len].to_vec() })
    }
}

pub fn colormap(map: Colormap, v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let to = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    match map {
        Colormap::Gray => [to(v); 3],
        Colormap::Jet => [
            to(1.5 - (4.0 * v - 3.0).abs()),
            to(1.5 - (4.0 * v - 2.0).abs()),
            to(1.5 - (4.0 * v - 1.0).abs()),
        ],
    }
}

/// A hole center as seen from both sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterMark {
    pub lidar: Vec3,
    pub anchor: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStats {
    pub drawn: usize,
    pub out_of_bounds: usize,
}

/// Draws the cloud colored by intensity, then a ring at each projected
/// LiDAR hole center and a cross at its image anchor.
pub fn render_overlay(
    cloud: &[LidarPoint],
    camera: &CameraModel,
    lidar_to_camera: &Pose,
    marks: &[CenterMark],
    canvas: Image,
    opts: &RenderOptions,
) -> (Image, RenderStats) {
    let mut img = canvas;
    let (w, h) = (img.width as f64, img.height as f64);
    let inside = |p: &Vec2| p.x >= -0.5 && p.y >= -0.5 && p.x < w - 0.5 && p.y < h - 0.5;
    let mut stats = RenderStats { drawn: 0, out_of_bounds: 0 };
    for pt in cloud {
        match camera.project(lidar_to_camera, &pt.position) {
            Ok(p) if inside(&p) => {
                img.disc(p, opts.point_radius_px, colormap(opts.colormap, pt.intensity));
                stats.drawn += 1;
            }
            _ => stats.out_of_bounds += 1,
        }
    }
    for m in marks {
        if let Ok(p) = camera.project(lidar_to_camera, &m.lidar) {
            img.ring(p, opts.ring_radius_px, opts.ring_color);
        }
        img.cross(m.anchor, opts.cross_half_px, opts.cross_color);
    }
    (img, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointcalib::geometry::Vec3;

    fn camera() -> CameraModel {
        CameraModel::pinhole(500.0, 500.0, 160.0, 120.0)
    }

    fn centroid(img: &Image, c: [u8; 3]) -> Vec2 {
        let mut sum = Vec2::zeros();
        let mut n = 0.0;
        for y in 0..img.height {
            for x in 0..img.width {
                if img.get(x, y) == c {
                    sum += Vec2::new(x as f64, y as f64);
                    n += 1.0;
                }
            }
        }
        sum / n
    }

    #[test]
    fn empty_cloud_leaves_canvas_blank() {
        let (img, stats) = render_overlay(&[], &camera(), &Pose::identity(), &[], Image::new(32, 24), &Default::default());
        assert!(img.pixels.iter().all(|&b| b == 0));
        assert_eq!(stats, RenderStats { drawn: 0, out_of_bounds: 0 });
    }

    #[test]
    fn ppm_header_and_size() {
        let mut buf = Vec::new();
        Image::new(7, 5).write_ppm(&mut buf).unwrap();
        let header = b"P6\n7 5\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 7 * 5 * 3);
        assert_eq!(Image::read_ppm(&buf[..]).unwrap(), Image::new(7, 5));
    }

    #[test]
    fn perfect_calibration_marks_coincide() {
        let cam = camera();
        let lidar = Vec3::new(0.13, -0.07, 2.0);
        let anchor = cam.project(&Pose::identity(), &lidar).unwrap();
        let marks = [CenterMark { lidar, anchor }];
        let (img, _) = render_overlay(&[], &cam, &Pose::identity(), &marks, Image::new(320, 240), &Default::default());
        let o = RenderOptions::default();
        let ring = centroid(&img, o.ring_color);
        let cross = centroid(&img, o.cross_color);
        assert!((ring - cross).norm() < 1.0, "ring {ring:?} cross {cross:?}");
        assert!((cross - anchor).norm() < 1.0);
    }

    #[test]
    fn points_outside_are_counted() {
        let cloud = [
            LidarPoint { position: Vec3::new(0.0, 0.0, 2.0), intensity: 1.0 },
            LidarPoint { position: Vec3::new(5.0, 0.0, 1.0), intensity: 1.0 },
            LidarPoint { position: Vec3::new(0.0, 0.0, -1.0), intensity: 1.0 },
        ];
        let (img, stats) =
            render_overlay(&cloud, &camera(), &Pose::identity(), &[], Image::new(320, 240), &Default::default());
        assert_eq!(stats, RenderStats { drawn: 1, out_of_bounds: 2 });
        assert_eq!(img.get(160, 120), colormap(Colormap::Jet, 1.0));
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(Colormap::Gray, 0.0), [0, 0, 0]);
        assert_eq!(colormap(Colormap::Gray, 1.0), [255, 255, 255]);
        assert_eq!(colormap(Colormap::Jet, 0.0), [0, 0, 128]);
        assert_eq!(colormap(Colormap::Jet, 1.0), [128, 0, 0]);
        assert_eq!(colormap(Colormap::Jet, 0.5), [128, 255, 128]);
    }
}
