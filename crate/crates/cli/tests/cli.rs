use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jointloc"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, dataset: &str, output: &str, epochs: usize) -> PathBuf {
    let path = dir.join(name);
    let text = format!("dataset = \"{dataset}\"\noutput_dir = \"{output}\"\nepochs = {epochs}\nk_neighbors = 8\n");
    std::fs::write(&path, text).unwrap();
    path
}

/// Raw and conditioned fixture datasets plus a 3-epoch run, built once.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self) -> &Path {
        self.dir.path()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        ok(&["synth", "raw", "--train", "2", "--val", "1", "--test", "1", "--grid-step", "0.045", "--seed", "5"], p);
        ok(&["preprocess", "raw", "cond", "--seed", "1"], p);
        write_config(p, "train.toml", "cond", "run", 3);
        ok(&["train", "train.toml"], p);
        Fixture { dir }
    })
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["preprocess", "train", "evaluate", "predict", "synth"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "x.toml", "--bogus"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "t.toml", "nowhere", "out", 1);
    let out = run(&["train", "t.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("does not exist"), "{err}");
}

#[test]
fn unknown_config_key_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.toml"), "dataset = \"d\"\noutput_dir = \"o\"\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(run(&["train", "t.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn training_writes_one_log_row_per_epoch() {
    let f = fixture();
    let log = std::fs::read_to_string(f.path().join("run/train_log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(log.starts_with("# jointloc "));
    assert!(f.path().join("run/last.ckpt").exists());
    assert!(f.path().join("run/best.ckpt").exists());
}

#[test]
fn preprocess_is_byte_deterministic() {
    let f = fixture();
    ok(&["preprocess", "raw", "cond_again", "--seed", "1"], f.path());
    for id in ["human_0000", "human_0003"] {
        for file in ["sample.ply", "joints.json", "mesh.ply"] {
            let a = std::fs::read(f.path().join("cond").join(id).join(file)).unwrap();
            let b = std::fs::read(f.path().join("cond_again").join(id).join(file)).unwrap();
            assert!(a == b, "{id}/{file} differs");
        }
    }
    let a = std::fs::read(f.path().join("cond/provenance.json")).unwrap();
    let b = std::fs::read(f.path().join("cond_again/provenance.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn preprocess_without_posing_only_normalizes() {
    let f = fixture();
    let limits = f.path().join("zero_limits.json");
    std::fs::write(&limits, r#"{"default": [[0,0],[0,0],[0,0]]}"#).unwrap();
    ok(&["preprocess", "raw", "cond_zero", "--seed", "9", "--limits-file", limits.to_str().unwrap()], f.path());
    let a = std::fs::read(f.path().join("cond/human_0001/sample.ply")).unwrap();
    let b = std::fs::read(f.path().join("cond_zero/human_0001/sample.ply")).unwrap();
    let body = |v: &[u8]| v[v.windows(10).position(|w| w == b"end_header").unwrap()..].to_vec();
    assert_eq!(body(&a), body(&b));
}

#[test]
fn preprocess_skips_broken_samples_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["synth", "raw", "--train", "2", "--val", "0", "--test", "0", "--grid-step", "0.045"], p);
    std::fs::write(p.join("raw/human_0001/rig.json"), "{").unwrap();
    let out = run(&["preprocess", "raw", "cond"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(p.join("cond/human_0000/sample.ply").exists());
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("cond/provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["failures"][0]["id"], "human_0001");
}

#[test]
fn evaluation_reports_are_reproducible_and_ordered() {
    let f = fixture();
    let p = f.path();
    ok(&["evaluate", "--dataset", "cond", "--checkpoint", "run/last.ckpt", "--out", "ev1", "--svg"], p);
    ok(&["evaluate", "--dataset", "cond", "--checkpoint", "run/last.ckpt", "--out", "ev2"], p);
    for file in ["mpjpe.csv", "pcj.csv"] {
        assert_eq!(
            std::fs::read(p.join("ev1").join(file)).unwrap(),
            std::fs::read(p.join("ev2").join(file)).unwrap()
        );
    }
    assert!(p.join("ev1/pcj.svg").exists());
    assert!(!p.join("ev2/pcj.svg").exists());
    let mpjpe = std::fs::read_to_string(p.join("ev1/mpjpe.csv")).unwrap();
    let categories: Vec<&str> = mpjpe.lines().skip(2).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(
        categories,
        ["Body", "Fingers", "Head", "Neck", "Shoulder", "Spine", "Hips", "Elbow", "Wrist", "Knee", "Foot"]
    );
    let pcj = std::fs::read_to_string(p.join("ev1/pcj.csv")).unwrap();
    assert_eq!(pcj.lines().filter(|l| !l.starts_with('#')).count(), 101);
}

#[test]
fn ground_truth_as_predictions_is_perfect() {
    let f = fixture();
    let p = f.path();
    ok(&["evaluate", "--dataset", "cond", "--predictions-dir", "cond", "--out", "ev_oracle"], p);
    let mpjpe = std::fs::read_to_string(p.join("ev_oracle/mpjpe.csv")).unwrap();
    for line in mpjpe.lines().skip(2) {
        assert!(line.ends_with(",0.000000"), "{line}");
    }
    let pcj = std::fs::read_to_string(p.join("ev_oracle/pcj.csv")).unwrap();
    for line in pcj.lines().skip(2) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(&cells[1..], ["1.000000", "1.000000"], "{line}");
    }
}

#[test]
fn normals_mismatch_is_a_contract_error() {
    let f = fixture();
    let out = run(
        &["evaluate", "--dataset", "cond", "--checkpoint", "run/last.ckpt", "--out", "ev_x", "--no-normals"],
        f.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("use_normals"));
}

#[test]
fn no_normals_flag_trains_xyz_only_model() {
    let f = fixture();
    let p = f.path();
    ok(&["train", "train.toml", "--no-normals", "--epochs", "1", "--output-dir", "run_xyz"], p);
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("run_xyz/train_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["use_normals"], false);
    ok(
        &["evaluate", "--dataset", "cond", "--checkpoint", "run_xyz/last.ckpt", "--out", "ev_xyz", "--no-normals"],
        p,
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn predict_writes_full_skeleton_and_matches_raw_input() {
    let f = fixture();
    let p = f.path();
    let stdout = ok(&["predict", "run/last.ckpt", "cond/human_0002", "pred_sample"], p);
    assert!(stdout.contains("conditioning") && stdout.contains("inference"));
    ok(&["predict", "run/last.ckpt", "raw/human_0002/mesh.ply", "pred_raw"], p);
    let a = json(&p.join("pred_sample/joints.json"));
    let b = json(&p.join("pred_raw/joints.json"));
    let joints = |v: &serde_json::Value| -> Vec<f64> {
        v["joints"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|j| j.as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    let (ja, jb) = (joints(&a), joints(&b));
    assert_eq!(ja.len(), 69 * 3);
    let gap = ja.iter().zip(&jb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-9, "{gap}");

    let ply = std::fs::read(p.join("pred_sample/skeleton.ply")).unwrap();
    let header = String::from_utf8_lossy(&ply[..ply.windows(10).position(|w| w == b"end_header").unwrap()]);
    assert!(header.contains("element vertex 69"));
    assert!(header.contains("element edge 68"));
    assert!(header.contains("comment jointloc "));
}

#[test]
fn too_few_points_is_a_contract_error() {
    let f = fixture();
    let p = f.path();
    let cloud = "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n1 1 1\n";
    std::fs::write(p.join("tiny.ply"), cloud).unwrap();
    let out = run(&["predict", "run/last.ckpt", "tiny.ply", "pred_tiny"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_neighbors"));
}
