use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_posegeom");

fn run(cmd: &str, config: &Value, dir: &Path, extra: &[&str]) -> Output {
    let cfg_path = dir.join(format!("{cmd}.config.json"));
    fs::write(&cfg_path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(&cfg_path)
        .args(extra)
        .env("POSEGEOM_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    files
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    sorted_files(dir)
        .into_iter()
        .map(|p| {
            let digest = Sha256::digest(fs::read(&p).unwrap());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            (p.strip_prefix(dir).unwrap().display().to_string(), hex)
        })
        .collect()
}

fn report(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

fn synth_config(frames: usize, scenes: usize, out: &Path) -> Value {
    json!({
        "task": "synth",
        "seed": 5,
        "out": out,
        "num_scenes": scenes,
        "scene": { "frames": frames, "width": 48, "height": 48, "object": { "n": 2000 } }
    })
}

#[test]
fn single_frame_synth_writes_four_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scene");
    ok(&run("synth", &synth_config(1, 1, &out), tmp.path(), &[]));
    let names: Vec<String> = sorted_files(&out)
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["depth_0.pgt", "nocs_0.pgt", "pointmap_0.pgt", "scene.json"]);
}

#[test]
fn three_frame_synth_has_two_relative_poses() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scene");
    ok(&run("synth", &synth_config(3, 1, &out), tmp.path(), &[]));
    let depth = sorted_files(&out)
        .iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("depth_"))
        .count();
    assert_eq!(depth, 3);
    let scene: Value = serde_json::from_slice(&fs::read(out.join("scene.json")).unwrap()).unwrap();
    assert_eq!(scene["gt_relative"].as_array().unwrap().len(), 2);
    assert_eq!(scene["units"]["length"], "m");
}

#[test]
fn synth_is_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&run("synth", &synth_config(2, 3, &a), tmp.path(), &["--workers", "1"]));
    ok(&run("synth", &synth_config(2, 3, &b), tmp.path(), &["--workers", "3"]));
    let (ca, cb) = (checksums(&a), checksums(&b));
    assert_eq!(ca.len(), 3 * 7);
    assert_eq!(ca, cb);
}

#[test]
fn seed_flag_changes_the_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&run("synth", &synth_config(1, 1, &a), tmp.path(), &[]));
    ok(&run("synth", &synth_config(1, 1, &b), tmp.path(), &["--seed", "6"]));
    assert_ne!(checksums(&a), checksums(&b));
}

#[test]
fn solve_rel_is_exact_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rel");
    let cfg = json!({
        "task": "solve-rel", "seed": 2, "out": out, "num_scenes": 4,
        "scene": { "frames": 3, "width": 64, "height": 64 },
        "point_map_scale": 0.3
    });
    ok(&run("solve-rel", &cfg, tmp.path(), &["--workers", "1"]));
    let first = report(&out);
    ok(&run("solve-rel", &cfg, tmp.path(), &["--workers", "4"]));
    assert_eq!(first, report(&out));
    for scene in first["scenes"].as_array().unwrap() {
        for f in scene["frames"].as_array().unwrap() {
            assert!(f["rot_err_deg"].as_f64().unwrap() < 1e-6, "{f}");
            assert!(f["trans_err_m"].as_f64().unwrap() < 1e-8, "{f}");
        }
    }
}

#[test]
fn solve_abs_reads_scenes_written_by_synth() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = tmp.path().join("scenes");
    ok(&run("synth", &synth_config(2, 2, &scenes), tmp.path(), &[]));
    let out = tmp.path().join("abs");
    let cfg = json!({ "task": "solve-abs", "out": out, "scene_dir": scenes });
    ok(&run("solve-abs", &cfg, tmp.path(), &[]));
    let first = report(&out);
    let frames: Vec<&Value> = first["scenes"].as_array().unwrap().iter().flat_map(|s| s["frames"].as_array().unwrap()).collect();
    assert_eq!(frames.len(), 4);
    for f in frames {
        assert!(f["rot_err_deg"].as_f64().unwrap() < 1e-6, "{f}");
        assert!(f["scale_rel_err"].as_f64().unwrap() < 1e-8, "{f}");
    }
    ok(&run("solve-abs", &cfg, tmp.path(), &[]));
    assert_eq!(first, report(&out));
}

#[test]
fn three_correspondences_fail_per_frame_not_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abs");
    let cfg = json!({
        "task": "solve-abs", "out": out,
        "scene": { "frames": 2, "width": 48, "height": 48 },
        "solve_abs": { "k_pixels": 3 }
    });
    ok(&run("solve-abs", &cfg, tmp.path(), &[]));
    let r = report(&out);
    for f in r["scenes"][0]["frames"].as_array().unwrap() {
        assert!(f["error"].as_str().unwrap().contains("4"), "{f}");
        assert_eq!(f["correspondences"], 3);
    }
}

#[test]
fn gradcheck_passes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    let cfg = json!({ "task": "gradcheck", "seed": 9, "out": out });
    let first_run = run("gradcheck", &cfg, tmp.path(), &[]);
    assert_eq!(first_run.status.code(), Some(0));
    let first = report(&out);
    assert_eq!(first["gradcheck"]["passed"], true);
    ok(&run("gradcheck", &cfg, tmp.path(), &[]));
    assert_eq!(first, report(&out));
}

#[test]
fn failing_tolerance_makes_gradcheck_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({ "task": "gradcheck", "out": tmp.path().join("gc"), "gradcheck": { "tol": 1e-15 } });
    assert_eq!(run("gradcheck", &cfg, tmp.path(), &[]).status.code(), Some(1));
}

#[test]
fn sweep_writes_csv_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let cfg = json!({
        "task": "sweep", "out": out, "num_scenes": 3,
        "scene": { "frames": 2, "width": 48, "height": 48 },
        "sweep": { "noise_sigmas": [0.0, 0.01], "views": [1, 2] }
    });
    ok(&run("sweep", &cfg, tmp.path(), &[]));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let first = report(&out);
    ok(&run("sweep", &cfg, tmp.path(), &["--workers", "2"]));
    assert_eq!(first, report(&out));
    assert_eq!(csv, fs::read_to_string(out.join("sweep.csv")).unwrap());
}

fn identity() -> Value {
    json!([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
}

fn pose(r: Value, t: [f64; 3]) -> Value {
    json!({ "r": r, "scale": [1.0, 1.0, 1.0], "t": t })
}

fn write_eval_inputs(dir: &Path, pred: Value, gt: Value) -> Value {
    let models = dir.join("models");
    fs::create_dir_all(&models).unwrap();
    let corners: Vec<[f64; 3]> = (0..8)
        .map(|i| [(i & 1) as f64 - 0.5, ((i >> 1) & 1) as f64 - 0.5, ((i >> 2) & 1) as f64 - 0.5])
        .collect();
    fs::write(models.join("cube.json"), json!({ "points": corners }).to_string()).unwrap();
    fs::write(dir.join("pred.json"), pred.to_string()).unwrap();
    fs::write(dir.join("gt.json"), gt.to_string()).unwrap();
    json!({
        "task": "eval",
        "out": dir.join("out"),
        "eval": { "pred": dir.join("pred.json"), "gt": dir.join("gt.json"), "models_dir": models }
    })
}

fn instance(id: &str, p: Value) -> Value {
    json!({ "id": id, "model": "cube", "pose": p })
}

#[test]
fn eval_three_instances_by_hand() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, c) = 8f64.to_radians().sin_cos();
    let rot8 = json!([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
    let gt = json!({ "instances": [
        instance("exact", pose(identity(), [0.0, 0.0, 2.0])),
        instance("shifted", pose(identity(), [0.0, 0.0, 2.0])),
        instance("turned", pose(identity(), [0.0, 0.0, 2.0])),
    ]});
    let pred = json!({ "instances": [
        instance("turned", pose(rot8, [0.0, 0.0, 2.0])),
        instance("exact", pose(identity(), [0.0, 0.0, 2.0])),
        instance("shifted", pose(identity(), [0.03, 0.0, 2.0])),
    ]});
    let cfg = write_eval_inputs(tmp.path(), pred, gt);
    ok(&run("eval", &cfg, tmp.path(), &[]));
    let m: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/metrics.json")).unwrap()).unwrap();
    let agg = &m["aggregate"];
    assert_eq!(agg["count"], 3);
    let acc: Vec<f64> = agg["threshold_accuracies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["accuracy"].as_f64().unwrap())
        .collect();
    // (5°,2cm) (5°,5cm) (10°,2cm) (10°,5cm)
    assert_eq!(acc, [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0]);
    // exact: 75 cells, shifted: 3 cm rows × 15, turned: 8 degree columns × 5
    assert!((agg["vus"].as_f64().unwrap() - 160.0 / 225.0).abs() < 1e-12);
    let corner_arc = 2.0 * 0.5f64.sqrt() * 4f64.to_radians().sin();
    assert!((agg["mean_add"].as_f64().unwrap() - (0.03 + corner_arc) / 3.0).abs() < 1e-12);
    let shifted = m["instances"].as_array().unwrap().iter().find(|i| i["id"] == "shifted").unwrap();
    assert!((shifted["iou"].as_f64().unwrap() - 0.97 / 1.03).abs() < 1e-9);
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let file = json!({ "instances": [instance("x", pose(identity(), [0.1, 0.2, 1.5]))] });
    let cfg = write_eval_inputs(tmp.path(), file.clone(), file);
    ok(&run("eval", &cfg, tmp.path(), &[]));
    let m: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["aggregate"]["vus"], 1.0);
    assert_eq!(m["aggregate"]["auc_iou"], 1.0);
    assert_eq!(m["aggregate"]["mean_add"], 0.0);
}

#[test]
fn eval_rejects_disjoint_ids_and_missing_models() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = json!({ "instances": [instance("a", pose(identity(), [0.0, 0.0, 1.0]))] });
    let pred = json!({ "instances": [instance("b", pose(identity(), [0.0, 0.0, 1.0]))] });
    let cfg = write_eval_inputs(tmp.path(), pred, gt.clone());
    assert_eq!(run("eval", &cfg, tmp.path(), &[]).status.code(), Some(2));

    let ghost = json!({ "instances": [{ "id": "a", "model": "ghost", "pose": pose(identity(), [0.0, 0.0, 1.0]) }] });
    let cfg = write_eval_inputs(tmp.path(), ghost.clone(), ghost);
    assert_eq!(run("eval", &cfg, tmp.path(), &[]).status.code(), Some(3));
}

#[test]
fn bad_configs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = json!({ "task": "solve-rel", "frobnicate": 1 });
    assert_eq!(run("solve-rel", &unknown, tmp.path(), &[]).status.code(), Some(2));
    let invalid = json!({ "task": "solve-rel", "scene": { "frames": 1 } });
    assert_eq!(run("solve-rel", &invalid, tmp.path(), &[]).status.code(), Some(2));
    let mismatch = json!({ "task": "gradcheck" });
    assert_eq!(run("sweep", &mismatch, tmp.path(), &[]).status.code(), Some(2));
}

#[test]
fn report_goes_to_stdout_without_out() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({ "task": "gradcheck", "gradcheck": { "points_per_loss": 2 } });
    let out = run("gradcheck", &cfg, tmp.path(), &[]);
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["task"], "gradcheck");
}
