//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, HarnessError, HarnessResult};
use crate::losses::LossConfig;
use crate::metrics::MetricThresholds;
use crate::synth::{CorruptionSpec, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Synth,
    SolveAbs,
    SolveRel,
    Eval,
    Gradcheck,
    Sweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Synth => "synth",
            Task::SolveAbs => "solve-abs",
            Task::SolveRel => "solve-rel",
            Task::Eval => "eval",
            Task::Gradcheck => "gradcheck",
            Task::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveAbsConfig {
    /// Pixels sampled per frame.
    pub k_pixels: usize,
    /// `None`: every frame solved on its own from depth. `Some(S)`: the
    /// anchor pose solved once from the pooled point-map correspondences of
    /// the first `S` frames.
    pub views: Option<usize>,
}

impl Default for SolveAbsConfig {
    fn default() -> Self {
        Self {
            k_pixels: 1024,
            views: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalInputs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub models_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub points_per_loss: usize,
    /// Central-difference step.
    pub eps: f64,
    pub tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            points_per_loss: 20,
            eps: 1e-6,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepSolver {
    Abs,
    Rel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub solver: SweepSolver,
    /// Meters.
    pub noise_sigmas: Vec<f64>,
    /// Pooled view counts; ignored by the relative solver.
    pub views: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            solver: SweepSolver::Abs,
            noise_sigmas: vec![0.0, 0.001, 0.005, 0.01],
            views: vec![1, 2, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub scene: SceneSpec,
    /// Scenes generated in memory when `scene_dir` is absent. Scene `i`
    /// uses seed `seed + i`.
    #[serde(default = "one")]
    pub num_scenes: usize,
    /// Scenes written by `synth`: either one scene directory or a directory
    /// of them.
    #[serde(default)]
    pub scene_dir: Option<PathBuf>,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    /// Global factor applied to predicted point maps.
    #[serde(default = "unit")]
    pub point_map_scale: f64,
    #[serde(default)]
    pub solve_abs: SolveAbsConfig,
    #[serde(default)]
    pub eval: Option<EvalInputs>,
    #[serde(default)]
    pub losses: LossConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub thresholds: MetricThresholds,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            seed: 0,
            out: None,
            scene: SceneSpec::default(),
            num_scenes: 1,
            scene_dir: None,
            corruption: CorruptionSpec::default(),
            point_map_scale: 1.0,
            solve_abs: SolveAbsConfig::default(),
            eval: None,
            losses: LossConfig::default(),
            gradcheck: GradcheckConfig::default(),
            thresholds: MetricThresholds::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let cfg: Self = read_json(path).map_err(|e| match e {
            HarnessError::Schema(msg) => invalid(msg),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let s = &self.scene;
        if s.frames == 0 {
            return Err(invalid("scene.frames must be >= 1"));
        }
        if s.width == 0 || s.height == 0 {
            return Err(invalid("scene resolution must be positive"));
        }
        if !(s.fov_deg > 0.0 && s.fov_deg < 180.0) {
            return Err(invalid("scene.fov_deg must lie in (0, 180)"));
        }
        if s.object.n < 8 {
            return Err(invalid("scene.object.n must be >= 8"));
        }
        s.pose.validate().map_err(|e| invalid(e.to_string()))?;
        if !(s.views.max_angle_deg >= 0.0 && s.views.max_offset >= 0.0) {
            return Err(invalid("scene.views ranges must be >= 0"));
        }
        if self.num_scenes == 0 {
            return Err(invalid("num_scenes must be >= 1"));
        }
        self.corruption.validate().map_err(|e| invalid(e.to_string()))?;
        self.losses.validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.point_map_scale > 0.0 && self.point_map_scale.is_finite()) {
            return Err(invalid("point_map_scale must be positive"));
        }
        if self.solve_abs.k_pixels == 0 {
            return Err(invalid("solve_abs.k_pixels must be >= 1"));
        }
        if self.solve_abs.views == Some(0) {
            return Err(invalid("solve_abs.views must be >= 1"));
        }
        let g = &self.gradcheck;
        if g.points_per_loss == 0 || !(g.eps > 0.0) || !(g.tol > 0.0) {
            return Err(invalid("gradcheck settings must be positive"));
        }
        for grid in [
            &self.thresholds.auc_grid,
            &self.thresholds.vus_rot_deg,
            &self.thresholds.vus_trans_cm,
        ] {
            grid.points().map_err(|e| invalid(e.to_string()))?;
        }
        match self.task {
            Task::SolveRel if self.scene_dir.is_none() && s.frames < 2 => {
                Err(invalid("solve-rel needs scenes with at least 2 frames"))
            }
            Task::Eval if self.eval.is_none() => Err(invalid("eval needs an `eval` section")),
            Task::Sweep if self.sweep.noise_sigmas.is_empty() => Err(invalid("sweep.noise_sigmas is empty")),
            Task::Sweep
                if self.sweep.solver == SweepSolver::Abs
                    && (self.sweep.views.is_empty() || self.sweep.views.iter().any(|&v| v == 0 || v > s.frames)) =>
            {
                Err(invalid("sweep.views must be non-empty and within 1..=scene.frames"))
            }
            Task::Sweep if self.sweep.noise_sigmas.iter().any(|x| !(*x >= 0.0 && x.is_finite())) => {
                Err(invalid("sweep noise levels must be >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"task": "synth"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Task::Synth));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json(r#"{"task": "synth", "bogus": 1}"#).unwrap_err();
        assert!(matches!(err, HarnessError::InvalidConfig(_)));
        let nested = r#"{"task": "synth", "scene": {"frames": 2, "colour": "red"}}"#;
        assert!(ExperimentConfig::from_json(nested).is_err());
    }

    #[test]
    fn range_checks() {
        assert!(ExperimentConfig::from_json(r#"{"task": "synth", "corruption": {"outlier_frac": 1.0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"task": "solve-rel", "scene": {"frames": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"task": "eval"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"task": "synth", "scene": {"pose": {"z_range": [0.05, 1.0]}}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::new(Task::SolveAbs);
        cfg.solve_abs.views = Some(3);
        cfg.scene.frames = 4;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
