use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shapecorr::geometry::io::{read_points, write_points};

fn shapecorr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapecorr"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHAPECORR_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, out: &str) -> String {
    let cfg = format!(
        r#"{{
  "dataset": {{"synthetic": {{"family": "ellipsoid", "n_shapes": 12, "latent_dims": 3, "subdivisions": 2, "seed": 4}}}},
  "model": {{"encoder": "dgcnn", "head": "attn", "N": 32, "M": 16, "L": 8, "graph_k": 4, "hidden_dim": 8, "seed": 2}},
  "train": {{"B": 4, "alpha": 0.1, "K": 4, "max_epochs": 3, "ES": 10, "seed": 2}},
  "evaluation": {{"specificity_samples": 20}},
  "output_dir": "{out}"
}}"#
    );
    let path = dir.join(format!("{out}.json"));
    fs::write(&path, cfg).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn training_twice_gives_identical_history() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let cfg = write_config(dir.path(), out);
        let o = shapecorr(&["train", "-c", &cfg], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/history.csv")).unwrap();
    let b = fs::read(dir.path().join("b/history.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(
        fs::read(dir.path().join("a/model.ckpt")).unwrap(),
        fs::read(dir.path().join("b/model.ckpt")).unwrap()
    );
}

#[test]
fn train_evaluate_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run");
    for cmd in ["preprocess", "train", "evaluate", "analyze"] {
        let o = shapecorr(&[cmd, "-c", &cfg], dir.path());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let _: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    }
    let run = dir.path().join("run");
    for f in [
        "preprocess/splits.csv",
        "model.ckpt",
        "evaluate/metrics.csv",
        "analysis/pca.bin",
        "analysis/variance.csv",
        "analysis/mean_shape.particles",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let shapes: Vec<_> = fs::read_dir(run.join("evaluate/correspondences/test")).unwrap().collect();
    let o = shapecorr(
        &["infer", "-c", &cfg, "--checkpoint", "run/model.ckpt", "--input", "run/evaluate/correspondences/test", "--maps"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = fs::read_dir(run.join("infer")).unwrap().count();
    assert!(written >= shapes.len());
}

#[test]
fn analyze_rank_two_sets_reports_two_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rank2");
    let corr = dir.path().join("sets");
    for i in 0..10 {
        let a = (i as f64 * 0.7).sin() * 3.0;
        let b = (i as f64 * 1.3).cos() * 2.0;
        let pts: Vec<[f64; 3]> = (0..20)
            .map(|j| {
                let t = j as f64;
                [t + a, t * 0.5 - b, (t * 0.3).sin() + a * 0.2]
            })
            .collect();
        write_points(corr.join(format!("s{i:02}.particles")), &pts).unwrap();
    }
    let o = shapecorr(&["analyze", "-c", &cfg, "--correspondences", "sets"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["compactness"]["modes"], 2);
    let mean = read_points(dir.path().join("rank2/analysis/mean_shape.particles")).unwrap();
    assert_eq!(mean.len(), 20);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad");
    let o = shapecorr(&["train", "-c", &cfg, "--set", "train.LR=-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = shapecorr(&["train", "-c", &cfg, "--set", "train.no_such_key=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let o = shapecorr(&["train", "-c", "broken.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = shapecorr(&["train", "-c", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(dir.path(), "x");
    let o = shapecorr(&["evaluate", "-c", &cfg, "--checkpoint", "absent.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_writes_meshes_and_latents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g");
    let o = shapecorr(&["generate", "-c", &cfg, "--out", "cohort"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let latents = fs::read_to_string(dir.path().join("cohort/latents.csv")).unwrap();
    assert_eq!(latents.lines().count(), 13);
    let plys = fs::read_dir(dir.path().join("cohort"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ply"))
        .count();
    assert_eq!(plys, 12);
}
