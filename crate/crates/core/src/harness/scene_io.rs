//! Scene directories: `scene.json` plus `depth_i.pgt` (H×W), `nocs_i.pgt`
//! (H×W×3) and `pointmap_i.pgt` (H×W×4: xyz then confidence) per frame.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::TensorFile;
use super::{read_json, write_json, HarnessError, HarnessResult};
use crate::camera::{DepthMap, Intrinsics, PointMap};
use crate::synth::{ObjectSpec, SceneFrame, SyntheticScene};
use crate::transforms::{AnisoSimilarity, RigidTransform, Vec3};

pub const SCENE_JSON: &str = "scene.json";
pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Units {
    length: String,
    angle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    gt_pose: AnisoSimilarity,
    intrinsics: Intrinsics,
    depth: String,
    nocs: String,
    pointmap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    format_version: u32,
    units: Units,
    seed: u64,
    object: ObjectSpec,
    canonical_pts: Vec<Vec3>,
    frames: Vec<FrameRecord>,
    /// Anchor camera → frame `i + 1` camera.
    gt_relative: Vec<RigidTransform>,
}

fn frame_files(i: usize) -> [String; 3] {
    [format!("depth_{i}.pgt"), format!("nocs_{i}.pgt"), format!("pointmap_{i}.pgt")]
}

fn vec3_payload(pts: &[Vec3]) -> Vec<f64> {
    pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Writes `scene` into `dir` (created if missing) and returns the files
/// written, `scene.json` first.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> HarnessResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut frames = Vec::with_capacity(scene.frames.len());
    let mut tensors = Vec::new();
    for (i, f) in scene.frames.iter().enumerate() {
        let (w, h) = (f.depth.width, f.depth.height);
        let [depth, nocs, pointmap] = frame_files(i);
        let pm: Vec<f64> = f
            .point_map
            .points
            .iter()
            .zip(&f.point_map.confidence)
            .flat_map(|(p, c)| [p.x, p.y, p.z, *c])
            .collect();
        tensors.push((depth.clone(), TensorFile::from_f64(&[h, w], f.depth.values.clone())?));
        tensors.push((nocs.clone(), TensorFile::from_f64(&[h, w, 3], vec3_payload(&f.nocs))?));
        tensors.push((pointmap.clone(), TensorFile::from_f64(&[h, w, 4], pm)?));
        frames.push(FrameRecord {
            gt_pose: f.gt_pose,
            intrinsics: f.intrinsics,
            depth,
            nocs,
            pointmap,
        });
    }
    let record = SceneRecord {
        format_version: SCENE_FORMAT_VERSION,
        units: Units {
            length: "m".into(),
            angle: "rad".into(),
        },
        seed: scene.seed,
        object: scene.object,
        canonical_pts: scene.canonical_pts.clone(),
        frames,
        gt_relative: scene.gt_relative.clone(),
    };
    let json_path = dir.join(SCENE_JSON);
    write_json(&json_path, &record)?;
    let mut written = vec![json_path];
    for (name, t) in tensors {
        let path = dir.join(name);
        t.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a scene directory and re-checks its pixel-wise consistency.
pub fn read_scene(dir: &Path) -> HarnessResult<SyntheticScene> {
    let record: SceneRecord = read_json(&dir.join(SCENE_JSON))?;
    if record.format_version != SCENE_FORMAT_VERSION {
        return Err(HarnessError::Schema(format!(
            "unsupported scene format version {}",
            record.format_version
        )));
    }
    if record.frames.is_empty() || record.gt_relative.len() + 1 != record.frames.len() {
        return Err(HarnessError::Schema("frame and relative pose counts disagree".into()));
    }
    let mut frames = Vec::with_capacity(record.frames.len());
    for f in &record.frames {
        let (w, h) = (f.intrinsics.width, f.intrinsics.height);
        let depth = TensorFile::load(&dir.join(&f.depth))?;
        let nocs = TensorFile::load(&dir.join(&f.nocs))?;
        let pm = TensorFile::load(&dir.join(&f.pointmap))?;
        let depth = DepthMap::new(w, h, depth.expect_f64(&[h, w])?.to_vec())?;
        let nocs = nocs
            .expect_f64(&[h, w, 3])?
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let pm = pm.expect_f64(&[h, w, 4])?;
        let points = pm.chunks_exact(4).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let confidence = pm.chunks_exact(4).map(|c| c[3]).collect();
        frames.push(SceneFrame {
            gt_pose: f.gt_pose,
            intrinsics: f.intrinsics,
            depth,
            nocs,
            point_map: PointMap::new(w, h, points, confidence)?,
        });
    }
    let scene = SyntheticScene {
        seed: record.seed,
        object: record.object,
        canonical_pts: record.canonical_pts,
        frames,
        gt_relative: record.gt_relative,
    };
    scene.self_check()?;
    Ok(scene)
}

/// Scene directories under `root`: `root` itself when it holds a
/// `scene.json`, otherwise its immediate subdirectories that do, sorted by
/// name. Returned with their ids.
pub fn discover_scenes(root: &Path) -> HarnessResult<Vec<(String, PathBuf)>> {
    if root.join(SCENE_JSON).is_file() {
        let id = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        return Ok(vec![(id, root.to_path_buf())]);
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| HarnessError::io(root, e))? {
        let path = entry.map_err(|e| HarnessError::io(root, e))?.path();
        if path.join(SCENE_JSON).is_file() {
            let id = path.file_name().unwrap().to_string_lossy().into_owned();
            found.push((id, path));
        }
    }
    if found.is_empty() {
        return Err(HarnessError::Schema(format!("no scene.json under {}", root.display())));
    }
    found.sort();
    Ok(found)
}
