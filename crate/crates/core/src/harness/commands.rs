//! Command drivers. Scenes are processed in parallel; results are always
//! collected in scene-id order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepSolver, Task};
use super::gradcheck::{check_cases, default_cases};
use super::report::{sweep_csv, FrameResult, RunReport, SceneResult, SweepCell};
use super::scene_io::{discover_scenes, read_scene, write_scene};
use super::{read_json, write_json, HarnessError, HarnessResult};
use crate::alignment::{fit_sa3_nocs_traced, relative_pose_two_step, WeightedCorrespondences};
use crate::camera::Intrinsics;
use crate::metrics::{
    median, pose_errors, posed_box_from_bounds, box_iou3d, box_iou3d_scale_normalized, InstanceRecord,
    MetricReport, ModelPoints, SymmetrySet,
};
use crate::synth::{corrupt, make_scene, sample_pixels, CorruptionSpec, SyntheticScene};
use crate::transforms::{AnisoSimilarity, RigidTransform, Vec3};

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug)]
pub struct CommandOutput {
    pub report: RunReport,
    /// Files written, in creation order.
    pub files: Vec<PathBuf>,
    /// 0 on success; 1 when gradcheck finds a failing gradient.
    pub exit_code: i32,
}

/// Runs `cfg.task` on a pool of `workers` threads (all cores when `None`).
pub fn run(cfg: &ExperimentConfig, workers: Option<usize>) -> HarnessResult<CommandOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
    let mut out = pool.install(|| match cfg.task {
        Task::Synth => cmd_synth(cfg),
        Task::SolveRel => cmd_solve_rel(cfg),
        Task::SolveAbs => cmd_solve_abs(cfg),
        Task::Eval => cmd_eval(cfg),
        Task::Gradcheck => cmd_gradcheck(cfg),
        Task::Sweep => cmd_sweep(cfg),
    })?;
    out.report.wall_time_s = start.elapsed().as_secs_f64();
    if cfg.task != Task::Synth {
        if let Some(dir) = output_dir(cfg)? {
            let path = dir.join(REPORT_JSON);
            write_json(&path, &out.report)?;
            out.files.push(path);
        }
    }
    info!("{} finished in {:.3} s", cfg.task.name(), out.report.wall_time_s);
    Ok(out)
}

fn output_dir(cfg: &ExperimentConfig) -> HarnessResult<Option<&Path>> {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn scene_id(i: usize) -> String {
    format!("scene_{i:04}")
}

fn scene_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.seed.wrapping_add(i as u64)
}

/// Writes `num_scenes` scenes. A single scene goes straight into the output
/// directory; several go into `scene_0000`, `scene_0001`, ...
pub fn cmd_synth(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let dir = output_dir(cfg)?.ok_or_else(|| HarnessError::InvalidConfig("synth needs an output directory".into()))?;
    let results: Vec<HarnessResult<(SceneResult, Vec<PathBuf>)>> = (0..cfg.num_scenes)
        .into_par_iter()
        .map(|i| {
            let seed = scene_seed(cfg, i);
            let scene = make_scene(&cfg.scene, seed)?;
            let target = if cfg.num_scenes == 1 {
                dir.to_path_buf()
            } else {
                dir.join(scene_id(i))
            };
            let files = write_scene(&scene, &target)?;
            Ok((
                SceneResult {
                    id: scene_id(i),
                    seed,
                    frames: Vec::new(),
                    error: None,
                },
                files,
            ))
        })
        .collect();
    let mut report = RunReport::new(cfg);
    let mut files = Vec::new();
    for r in results {
        let (scene, written) = r?;
        report.scenes.push(scene);
        files.extend(written);
    }
    Ok(CommandOutput {
        report,
        files,
        exit_code: 0,
    })
}

struct SceneInput {
    id: String,
    seed: u64,
    scene: Result<SyntheticScene, String>,
}

/// Scenes from `scene_dir` when given, otherwise generated in memory.
fn scene_inputs(cfg: &ExperimentConfig) -> HarnessResult<Vec<SceneInput>> {
    if let Some(root) = &cfg.scene_dir {
        let found = discover_scenes(root)?;
        return Ok(found
            .into_par_iter()
            .map(|(id, path)| {
                let scene = read_scene(&path).map_err(|e| e.to_string());
                let seed = scene.as_ref().map(|s| s.seed).unwrap_or(0);
                SceneInput { id, seed, scene }
            })
            .collect());
    }
    Ok((0..cfg.num_scenes)
        .into_par_iter()
        .map(|i| {
            let seed = scene_seed(cfg, i);
            SceneInput {
                id: scene_id(i),
                seed,
                scene: make_scene(&cfg.scene, seed).map_err(|e| e.to_string()),
            }
        })
        .collect())
}

/// The prediction-side copy of a scene: corrupted with a per-scene seed,
/// then point maps scaled by `point_map_scale`.
pub fn predictions(cfg: &ExperimentConfig, scene: &SyntheticScene) -> HarnessResult<SyntheticScene> {
    let spec = CorruptionSpec {
        seed: cfg.corruption.seed.wrapping_add(scene.seed),
        ..cfg.corruption
    };
    let pred = corrupt(scene, &spec)?;
    Ok(if cfg.point_map_scale == 1.0 {
        pred
    } else {
        pred.with_scaled_point_maps(cfg.point_map_scale)
    })
}

fn solve_scenes(
    cfg: &ExperimentConfig,
    inputs: &[SceneInput],
    solve: impl Fn(&ExperimentConfig, &SyntheticScene) -> HarnessResult<Vec<FrameResult>> + Sync,
) -> Vec<SceneResult> {
    inputs
        .par_iter()
        .map(|input| {
            let outcome = input
                .scene
                .as_ref()
                .map_err(|e| e.clone())
                .and_then(|scene| solve(cfg, scene).map_err(|e| e.to_string()));
            match outcome {
                Ok(frames) => SceneResult {
                    id: input.id.clone(),
                    seed: input.seed,
                    frames,
                    error: None,
                },
                Err(e) => {
                    warn!("{}: {e}", input.id);
                    SceneResult {
                        id: input.id.clone(),
                        seed: input.seed,
                        frames: Vec::new(),
                        error: Some(e),
                    }
                }
            }
        })
        .collect()
}

/// Relative pose of every query frame against the anchor.
pub fn solve_rel_scene(cfg: &ExperimentConfig, scene: &SyntheticScene) -> HarnessResult<Vec<FrameResult>> {
    if scene.num_frames() < 2 {
        return Err(HarnessError::InvalidConfig("solve-rel needs at least 2 frames".into()));
    }
    let pred = predictions(cfg, scene)?;
    let anchor_cam = pred.camera_points(0)?;
    let mut frames = Vec::with_capacity(scene.num_frames() - 1);
    for i in 1..scene.num_frames() {
        let query_cam = pred.camera_points(i)?;
        let valid = (0..query_cam.len())
            .filter(|&p| query_cam.confidence[p] * pred.frames[i].point_map.confidence[p] > 0.0)
            .count();
        let result = relative_pose_two_step(&pred.frames[0].point_map, &anchor_cam, &pred.frames[i].point_map, &query_cam);
        frames.push(match result {
            Ok(rel) => {
                let (rot, trans) = pose_errors(&rel.transform, &scene.gt_relative[i - 1]);
                FrameResult {
                    relative: Some(rel.transform),
                    rot_err_deg: Some(rot),
                    trans_err_m: Some(trans),
                    rmse: Some(rel.query_rmse),
                    ..FrameResult::blank(i, 2, valid)
                }
            }
            Err(e) => FrameResult::failed(i, 2, valid, e.to_string()),
        });
    }
    Ok(frames)
}

fn sampler_seed(scene: &SyntheticScene, frame: usize) -> u64 {
    scene.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(frame as u64)
}

fn abs_result(
    frame: usize,
    views: usize,
    corr: HarnessResult<WeightedCorrespondences>,
    gt: &AnisoSimilarity,
) -> FrameResult {
    let n = corr.as_ref().map(|c| c.support()).unwrap_or(0);
    let fit = corr.and_then(|c| fit_sa3_nocs_traced(&c).map_err(HarnessError::from));
    match fit {
        Ok(fit) => {
            let pose = fit.alignment.transform;
            let (rot, trans) = pose_errors(&pose.rigid_part(), &gt.rigid_part());
            let scale_err = (0..3)
                .map(|k| (pose.scale[k] - gt.scale[k]).abs() / gt.scale[k])
                .fold(0.0, f64::max);
            FrameResult {
                pose: Some(pose),
                rot_err_deg: Some(rot),
                trans_err_m: Some(trans),
                scale_rel_err: Some(scale_err),
                iterations: Some(fit.iterations),
                rmse: Some(fit.alignment.rmse),
                ..FrameResult::blank(frame, views, n)
                }
        }
        Err(e) => FrameResult::failed(frame, views, n, e.to_string()),
    }
}

/// Absolute SA(3) pose. Per-frame mode pairs NOCS with backprojected depth
/// of the same frame; pooled mode pairs NOCS with the anchor-frame point
/// maps of the first `views` frames and solves the anchor pose once.
pub fn solve_abs_scene(cfg: &ExperimentConfig, scene: &SyntheticScene) -> HarnessResult<Vec<FrameResult>> {
    let pred = predictions(cfg, scene)?;
    let k = cfg.solve_abs.k_pixels;
    match cfg.solve_abs.views {
        None => (0..scene.num_frames())
            .map(|i| {
                let cam = pred.camera_points(i)?;
                let valid: Vec<usize> = (0..cam.len()).filter(|&p| cam.confidence[p] > 0.0).collect();
                let picked = sample_pixels(&valid, k, sampler_seed(scene, i));
                let corr = WeightedCorrespondences::uniform(
                    picked.iter().map(|&p| scene.frames[i].nocs[p]).collect(),
                    picked.iter().map(|&p| cam.points[p]).collect(),
                )
                .map_err(HarnessError::from);
                Ok(abs_result(i, 1, corr, &scene.frames[i].gt_pose))
            })
            .collect(),
        Some(views) => {
            if views > scene.num_frames() {
                return Err(HarnessError::InvalidConfig(format!(
                    "{views} views requested from a {}-frame scene",
                    scene.num_frames()
                )));
            }
            let (mut src, mut dst, mut w) = (Vec::new(), Vec::new(), Vec::new());
            for j in 0..views {
                let pm = &pred.frames[j].point_map;
                let valid: Vec<usize> = (0..pm.len()).filter(|&p| pm.confidence[p] > 0.0).collect();
                for p in sample_pixels(&valid, k, sampler_seed(scene, j)) {
                    src.push(scene.frames[j].nocs[p]);
                    dst.push(pm.points[p]);
                    w.push(pm.confidence[p]);
                }
            }
            let corr = WeightedCorrespondences::new(src, dst, w).map_err(HarnessError::from);
            Ok(vec![abs_result(0, views, corr, &scene.frames[0].gt_pose)])
        }
    }
}

fn canonical_bounds(scene: &SyntheticScene) -> (Vec3, Vec3) {
    scene.canonical_pts.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

fn aggregate(
    cfg: &ExperimentConfig,
    scenes: &[SceneResult],
    boxes: impl Fn(&str, &FrameResult) -> Option<(f64, f64)>,
) -> HarnessResult<Option<MetricReport>> {
    let mut instances = Vec::new();
    for s in scenes {
        for f in &s.frames {
            if let (Some(rot), Some(trans)) = (f.rot_err_deg, f.trans_err_m) {
                let mut rec = InstanceRecord::from_pose_errors(format!("{}/frame_{}", s.id, f.frame), rot, trans);
                if let Some((iou, niou)) = boxes(&s.id, f) {
                    rec.iou = Some(iou);
                    rec.niou = Some(niou);
                }
                instances.push(rec);
            }
        }
    }
    if instances.is_empty() {
        return Ok(None);
    }
    Ok(Some(MetricReport::build(instances, &cfg.thresholds)?))
}

pub fn cmd_solve_rel(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let inputs = scene_inputs(cfg)?;
    let mut report = RunReport::new(cfg);
    report.scenes = solve_scenes(cfg, &inputs, solve_rel_scene);
    report.aggregate = aggregate(cfg, &report.scenes, |_, _| None)?;
    Ok(CommandOutput {
        report,
        files: Vec::new(),
        exit_code: 0,
    })
}

pub fn cmd_solve_abs(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let inputs = scene_inputs(cfg)?;
    let mut report = RunReport::new(cfg);
    report.scenes = solve_scenes(cfg, &inputs, solve_abs_scene);
    let by_id: BTreeMap<&str, &SyntheticScene> = inputs
        .iter()
        .filter_map(|i| i.scene.as_ref().ok().map(|s| (i.id.as_str(), s)))
        .collect();
    report.aggregate = aggregate(cfg, &report.scenes, |id, f| {
        let scene = by_id.get(id)?;
        let (lo, hi) = canonical_bounds(scene);
        let pb = posed_box_from_bounds(f.pose.as_ref()?, &lo, &hi).ok()?;
        let gb = posed_box_from_bounds(&scene.frames[f.frame].gt_pose, &lo, &hi).ok()?;
        Some((box_iou3d(&pb, &gb), box_iou3d_scale_normalized(&pb, &gb)))
    })?;
    Ok(CommandOutput {
        report,
        files: Vec::new(),
        exit_code: 0,
    })
}

/// One object instance in a prediction or ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub id: String,
    /// Model name, resolved as `<models_dir>/<model>.json`.
    pub model: String,
    pub pose: AnisoSimilarity,
    /// Needed for the projective metric; read from the ground truth side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub instances: Vec<PoseRecord>,
}

/// Model file: surface points in the model frame and optional symmetries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub points: Vec<Vec3>,
    #[serde(default)]
    pub symmetries: Vec<RigidTransform>,
}

fn index_records(file: PoseFile, which: &str) -> HarnessResult<BTreeMap<String, PoseRecord>> {
    let mut map = BTreeMap::new();
    for r in file.instances {
        let id = r.id.clone();
        if map.insert(id.clone(), r).is_some() {
            return Err(HarnessError::Schema(format!("duplicate id '{id}' in {which} file")));
        }
    }
    Ok(map)
}

/// Full metric suite over the instances present in both files.
pub fn evaluate_files(pred: &Path, gt: &Path, models_dir: &Path, cfg: &ExperimentConfig) -> HarnessResult<MetricReport> {
    let preds = index_records(read_json(pred)?, "prediction")?;
    let gts = index_records(read_json(gt)?, "ground-truth")?;
    let matched: Vec<(&PoseRecord, &PoseRecord)> = gts
        .iter()
        .filter_map(|(id, g)| preds.get(id).map(|p| (p, g)))
        .collect();
    if matched.is_empty() {
        return Err(HarnessError::Schema("prediction and ground-truth ids do not intersect".into()));
    }
    let unmatched = gts.len() + preds.len() - 2 * matched.len();
    if unmatched > 0 {
        warn!("{unmatched} instances without a counterpart are ignored");
    }
    let mut models: BTreeMap<&str, (ModelPoints, SymmetrySet)> = BTreeMap::new();
    for (p, g) in &matched {
        if p.model != g.model {
            return Err(HarnessError::Schema(format!("instance '{}' names two different models", g.id)));
        }
        if !models.contains_key(g.model.as_str()) {
            let path = models_dir.join(format!("{}.json", g.model));
            if !path.is_file() {
                return Err(HarnessError::MissingModel(g.model.clone()));
            }
            let file: ModelFile = read_json(&path)?;
            models.insert(g.model.as_str(), (ModelPoints::new(file.points)?, SymmetrySet::new(file.symmetries)));
        }
    }
    let records: Vec<HarnessResult<InstanceRecord>> = matched
        .par_iter()
        .map(|(p, g)| {
            let (model, sym) = &models[g.model.as_str()];
            Ok(InstanceRecord::evaluate(&g.id, &p.pose, &g.pose, model, sym, g.intrinsics.as_ref())?)
        })
        .collect();
    let records = records.into_iter().collect::<HarnessResult<Vec<_>>>()?;
    Ok(MetricReport::build(records, &cfg.thresholds)?)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let inputs = cfg
        .eval
        .as_ref()
        .ok_or_else(|| HarnessError::InvalidConfig("eval needs an `eval` section".into()))?;
    let metrics = evaluate_files(&inputs.pred, &inputs.gt, &inputs.models_dir, cfg)?;
    let mut files = Vec::new();
    if let Some(dir) = output_dir(cfg)? {
        let path = dir.join(METRICS_JSON);
        write_json(&path, &metrics)?;
        files.push(path);
    }
    let mut report = RunReport::new(cfg);
    report.aggregate = Some(metrics);
    Ok(CommandOutput {
        report,
        files,
        exit_code: 0,
    })
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    output_dir(cfg)?;
    let summary = check_cases(&default_cases(&cfg.losses, &cfg.gradcheck, cfg.seed), &cfg.gradcheck);
    for l in &summary.losses {
        let status = if l.passed { "ok" } else { "FAILED" };
        info!("{:<16} max rel err {:.3e} {status}", l.name, l.max_rel_err);
    }
    let exit_code = if summary.passed { 0 } else { 1 };
    let mut report = RunReport::new(cfg);
    report.gradcheck = Some(summary);
    Ok(CommandOutput {
        report,
        files: Vec::new(),
        exit_code,
    })
}

/// Median errors over a noise × views grid. Scenes are generated once and
/// shared by all cells; each scene's noise draws are reused across noise
/// levels, only their magnitude changes.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> HarnessResult<CommandOutput> {
    let inputs = scene_inputs(cfg)?;
    let views: Vec<usize> = match cfg.sweep.solver {
        SweepSolver::Abs => cfg.sweep.views.clone(),
        SweepSolver::Rel => vec![2],
    };
    let mut cells = Vec::new();
    for &sigma in &cfg.sweep.noise_sigmas {
        for &v in &views {
            let mut cell_cfg = cfg.clone();
            cell_cfg.corruption.noise_sigma = sigma;
            let scenes = match cfg.sweep.solver {
                SweepSolver::Abs => {
                    cell_cfg.solve_abs.views = Some(v);
                    solve_scenes(&cell_cfg, &inputs, solve_abs_scene)
                }
                SweepSolver::Rel => solve_scenes(&cell_cfg, &inputs, solve_rel_scene),
            };
            let frames = scenes.iter().flat_map(|s| &s.frames);
            let rot: Vec<f64> = frames.clone().filter_map(|f| f.rot_err_deg).collect();
            let trans: Vec<f64> = frames.clone().filter_map(|f| f.trans_err_m).collect();
            let failed = frames.filter(|f| f.error.is_some()).count() + scenes.iter().filter(|s| s.error.is_some()).count();
            cells.push(SweepCell {
                solver: cfg.sweep.solver,
                noise_sigma: sigma,
                views: v,
                solved: rot.len(),
                failed,
                median_rot_err_deg: median(&rot),
                median_trans_err_m: median(&trans),
            });
        }
    }
    let mut files = Vec::new();
    if let Some(dir) = output_dir(cfg)? {
        let path = dir.join(SWEEP_CSV);
        fs::write(&path, sweep_csv(&cells)).map_err(|e| HarnessError::io(&path, e))?;
        files.push(path);
    }
    let mut report = RunReport::new(cfg);
    report.sweep = Some(cells);
    Ok(CommandOutput {
        report,
        files,
        exit_code: 0,
    })
}
