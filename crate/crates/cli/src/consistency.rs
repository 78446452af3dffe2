//! Repeatability of the intrinsic bootstrap: many random view subsets
//! drawn from fixed groups of checkerboard observations.

use jointcalib::board::BoardSpec;
use jointcalib::geometry::{rotation_from_rpy, CameraModel, Pose, Vec3};
use jointcalib::init::{initialize, InitError};
use jointcalib::optimize::{refine_with_corners, OptimizeError, OptimizeOptions};
use jointcalib::simulate::CornerObservation;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const PARAMETER_NAMES: [&str; 8] = ["fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2"];

/// One group of single-board views sharing a camera.
pub type ViewGroup = Vec<Vec<CornerObservation>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: usize,
    pub views: usize,
    pub parameters: Vec<ParameterStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub trials: usize,
    pub subset_size: usize,
    pub refine: bool,
    pub seed: u64,
    pub groups: Vec<GroupStats>,
}

impl ConsistencyReport {
    pub fn std_of(&self, group: usize, name: &str) -> Option<f64> {
        self.groups.get(group)?.parameters.iter().find(|p| p.name == name).map(|p| p.std)
    }
}

fn pool_rng(seed: u64, group: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | group as u64);
    rng
}

/// Sampling stream of one trial; depends on nothing but its indices.
pub fn trial_rng(seed: u64, group: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group as u64) << 32) | trial as u64);
    rng
}

/// Random single-board views filling the image from varied angles, with
/// every corner inside the image.
pub fn synthetic_group(
    camera: &CameraModel,
    spec: &BoardSpec,
    image_size: (u32, u32),
    views: usize,
    noise_px: f64,
    seed: u64,
    group: usize,
) -> ViewGroup {
    let mut rng = pool_rng(seed, group);
    let noise = (noise_px > 0.0).then(|| Normal::new(0.0, noise_px).expect("positive sigma"));
    let corners = spec.corner_points();
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = Vec::with_capacity(views);
    while out.len() < views {
        let depth = rng.random_range(1.2..3.0);
        let u = rng.random_range(0.15..0.85) * w;
        let v = rng.random_range(0.15..0.85) * h;
        let center = Vec3::new((u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth);
        let r = rotation_from_rpy(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.3..0.3),
        );
        let pose = Pose::from_matrix(&r, center).expect("rotation is orthonormal");
        let projected: Option<Vec<_>> = corners
            .iter()
            .map(|c| {
                let p = camera.project(&pose, c).ok()?;
                (p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h).then_some(p)
            })
            .collect();
        let Some(pixels) = projected else { continue };
        let view = corners
            .iter()
            .zip(pixels)
            .map(|(c, mut p)| {
                if let Some(n) = &noise {
                    p.x += n.sample(&mut rng);
                    p.y += n.sample(&mut rng);
                }
                CornerObservation { board_point: *c, pixel: p }
            })
            .collect();
        out.push(view);
    }
    out
}

fn calibrate_subset(
    views: &[Vec<CornerObservation>],
    spec: &BoardSpec,
    image_size: (u32, u32),
    refine: bool,
    opts: &OptimizeOptions,
) -> Result<[f64; 8], CliError> {
    let init = initialize(views, spec).map_err(|e| CliError::init(&e))?;
    let camera = if refine {
        match refine_with_corners(&init.camera, &init.board_poses, views, image_size, opts) {
            Ok(r) => r.params.camera,
            Err(OptimizeError::NotConverged(r)) => r.params.camera,
            Err(e) => return Err(CliError::optimize(&e)),
        }
    } else {
        init.camera
    };
    let [k1, k2, p1, p2] = camera.dist;
    Ok([camera.fx, camera.fy, camera.cx, camera.cy, k1, k2, p1, p2])
}

fn stats(samples: &[[f64; 8]]) -> Vec<ParameterStats> {
    let n = samples.len() as f64;
    PARAMETER_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n;
            let var = if samples.len() > 1 {
                samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ParameterStats { name: name.to_string(), mean, std: var.sqrt() }
        })
        .collect()
}

/// Per group: `trials` calibrations, each on `subset_size` views drawn
/// without replacement, summarized as mean and sample standard deviation
/// of every intrinsic parameter.
#[allow(clippy::too_many_arguments)]
pub fn consistency_study(
    groups: &[ViewGroup],
    spec: &BoardSpec,
    image_size: (u32, u32),
    trials: usize,
    subset_size: usize,
    refine: bool,
    opts: &OptimizeOptions,
    seed: u64,
) -> Result<ConsistencyReport, CliError> {
    let mut out = Vec::with_capacity(groups.len());
    for (g, views) in groups.iter().enumerate() {
        if views.len() < subset_size {
            return Err(CliError::init(&InitError::InsufficientViews { got: views.len(), need: subset_size }));
        }
        let samples = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, g, t);
                let mut picked = sample(&mut rng, views.len(), subset_size).into_vec();
                picked.sort_unstable();
                let subset: Vec<_> = picked.iter().map(|&i| views[i].clone()).collect();
                calibrate_subset(&subset, spec, image_size, refine, opts)
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(GroupStats { group: g, views: views.len(), parameters: stats(&samples) });
    }
    Ok(ConsistencyReport { trials, subset_size, refine, seed, groups: out })
}
