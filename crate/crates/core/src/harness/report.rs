//! Run reports. Everything except `wall_time_s` is a deterministic function
//! of the configuration.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepSolver, Task};
use super::gradcheck::GradcheckSummary;
use crate::metrics::MetricReport;
use crate::transforms::{AnisoSimilarity, RigidTransform};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One solved frame (or the pooled anchor solve).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameResult {
    pub frame: usize,
    /// Number of frames whose correspondences were pooled.
    pub views: usize,
    pub correspondences: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative: Option<RigidTransform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose: Option<AnisoSimilarity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rot_err_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trans_err_m: Option<f64>,
    /// Largest per-axis relative scale error (absolute solves).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_rel_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameResult {
    pub fn failed(frame: usize, views: usize, correspondences: usize, error: String) -> Self {
        Self {
            error: Some(error),
            ..Self::blank(frame, views, correspondences)
        }
    }

    /// No estimate and no error.
    pub fn blank(frame: usize, views: usize, correspondences: usize) -> Self {
        Self {
            frame,
            views,
            correspondences,
            relative: None,
            pose: None,
            rot_err_deg: None,
            trans_err_m: None,
            scale_rel_err: None,
            iterations: None,
            rmse: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneResult {
    pub id: String,
    pub seed: u64,
    pub frames: Vec<FrameResult>,
    /// Set when the scene itself could not be produced or loaded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Median errors of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCell {
    pub solver: SweepSolver,
    pub noise_sigma: f64,
    pub views: usize,
    pub solved: usize,
    pub failed: usize,
    pub median_rot_err_deg: f64,
    pub median_trans_err_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub version: String,
    pub task: Task,
    pub config: ExperimentConfig,
    pub scenes: Vec<SceneResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepCell>>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            version: TOOLKIT_VERSION.to_string(),
            task: config.task,
            config: config.clone(),
            scenes: Vec::new(),
            aggregate: None,
            gradcheck: None,
            sweep: None,
            wall_time_s: 0.0,
        }
    }

    /// The report as a JSON value with the wall time removed, for
    /// run-to-run comparison.
    pub fn comparable_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_s");
        }
        v
    }
}

/// Sweep cells as CSV with a header row.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("solver,noise_sigma_m,views,solved,failed,median_rot_err_deg,median_trans_err_m\n");
    for c in cells {
        let solver = match c.solver {
            SweepSolver::Abs => "abs",
            SweepSolver::Rel => "rel",
        };
        out.push_str(&format!(
            "{solver},{},{},{},{},{:e},{:e}\n",
            c.noise_sigma, c.views, c.solved, c.failed, c.median_rot_err_deg, c.median_trans_err_m
        ));
    }
    out
}
