//! Run configuration shared by every subcommand. Relative paths resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use jointcalib::geometry::Pose;
use jointcalib::optimize::OptimizeOptions;
use jointcalib::simulate::{reference_scene, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Stage};
use crate::pipeline::BoardSetup;
use crate::render::RenderOptions;

/// Scene to generate: a path to a scene JSON, the scene inline, or the
/// built-in six-board reference rig with the given noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Reference { reference: ReferenceNoise },
    Path(PathBuf),
    Inline(Box<SceneSpec>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNoise {
    #[serde(default)]
    pub corner_noise_px: f64,
    #[serde(default)]
    pub range_noise_sigma_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Relative error applied to the initial fx before both solves.
    pub fx_perturbation: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { fx_perturbation: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    pub groups: usize,
    pub views_per_group: usize,
    pub trials: usize,
    pub subset_size: usize,
    pub corner_noise_px: f64,
    /// Corner-only refinement of intrinsics and distortion after Zhang.
    pub refine: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { groups: 3, views_per_group: 40, trials: 100, subset_size: 25, corner_noise_px: 0.2, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: Option<SceneSource>,
    pub frames_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Detection setup per board; derived from the frames' truth file when
    /// absent.
    pub boards: Option<Vec<BoardSetup>>,
    /// Hole-center detections to use instead of running the detector,
    /// e.g. the output of an earlier `detect`.
    pub detections: Option<PathBuf>,
    /// Padding of the derived regions of interest, meters.
    pub roi_margin: f64,
    pub optimize: OptimizeOptions,
    pub initial_extrinsic: Option<Pose>,
    pub render: RenderOptions,
    pub ablation: AblationConfig,
    pub consistency: ConsistencyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: None,
            frames_dir: PathBuf::from("frames"),
            output_dir: PathBuf::from("out"),
            boards: None,
            detections: None,
            roi_margin: 0.15,
            optimize: OptimizeOptions::default(),
            initial_extrinsic: None,
            render: RenderOptions::default(),
            ablation: AblationConfig::default(),
            consistency: ConsistencyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(Stage::Config, path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        self.frames_dir = base.join(&self.frames_dir);
        self.output_dir = base.join(&self.output_dir);
        if let Some(SceneSource::Path(p)) = &mut self.scene {
            *p = base.join(&*p);
        }
        if let Some(p) = &mut self.detections {
            *p = base.join(&*p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.roi_margin.is_finite() && self.roi_margin >= 0.0) {
            return Err(CliError::config("roi_margin must be finite and non-negative"));
        }
        if !self.ablation.fx_perturbation.is_finite() || self.ablation.fx_perturbation <= -1.0 {
            return Err(CliError::config("fx_perturbation must be finite and above -1"));
        }
        let c = &self.consistency;
        if c.trials == 0 || c.subset_size == 0 || c.groups == 0 {
            return Err(CliError::config("consistency groups, trials and subset_size must be positive"));
        }
        if !(c.corner_noise_px.is_finite() && c.corner_noise_px >= 0.0) {
            return Err(CliError::config("consistency corner noise must be non-negative"));
        }
        self.render.validate()
    }

    /// The scene to generate, with `seed` overriding the scene's own.
    pub fn scene_spec(&self, seed: Option<u64>) -> Result<SceneSpec, CliError> {
        let mut scene = match &self.scene {
            None => return Err(CliError::config("no scene configured")),
            Some(SceneSource::Reference { reference }) => {
                reference_scene(reference.corner_noise_px, reference.range_noise_sigma_m, 0)
            }
            Some(SceneSource::Inline(s)) => (**s).clone(),
            Some(SceneSource::Path(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(Stage::Generate, p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(s) = seed {
            scene.seed = s;
        }
        scene.validate().map_err(|e| CliError::config(e))?;
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut cfg: RunConfig =
            serde_json::from_str(r#"{"scene": "s.json", "frames_dir": "f", "output_dir": "/abs/out"}"#).unwrap();
        cfg.resolve(Path::new("/cfg"));
        assert_eq!(cfg.frames_dir, PathBuf::from("/cfg/f"));
        assert_eq!(cfg.output_dir, PathBuf::from("/abs/out"));
        assert_eq!(cfg.scene, Some(SceneSource::Path(PathBuf::from("/cfg/s.json"))));
    }

    #[test]
    fn reference_scene_source_parses() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"scene": {"reference": {"corner_noise_px": 0.2}}}"#).unwrap();
        let scene = cfg.scene_spec(Some(9)).unwrap();
        assert_eq!(scene.corner_noise_px, 0.2);
        assert_eq!(scene.lidar.range_noise_sigma_m, 0.0);
        assert_eq!(scene.seed, 9);
        assert_eq!(scene.boards.len(), 6);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg: RunConfig = serde_json::from_str(r#"{"roi_margin": -1.0}"#).unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code, crate::error::EXIT_CONFIG);
        assert!(serde_json::from_str::<RunConfig>(r#"{"roi_margin": "x"}"#).is_err());
        assert!(cfg.scene_spec(None).is_err());
    }
}
