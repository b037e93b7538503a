use std::path::Path;
use std::time::Instant;

use geometry::io::{atomic_write, ply};
use geometry::{mesh_to_pointcloud, PointCloud, ScaleRecord, UpAxis};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::Checkpoint;
use crate::provenance;
use crate::rigdata::files::{to_json_bytes, JOINTS_FILE};
use crate::rigdata::sample::{condition_cloud, load_sample};
use crate::rigdata::skeleton::Skeleton;

pub const SKELETON_FILE: &str = "skeleton.ply";

/// `joints.json` written by `predict`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub source: String,
    pub stamp: String,
    pub names: Vec<String>,
    /// In the input's own coordinates.
    pub joints: Vec<[f64; 3]>,
    /// In the unit-height frame the network saw.
    pub normalized_joints: Vec<[f64; 3]>,
    pub scale: ScaleRecord,
}

impl PredictionFile {
    pub fn normalized_points(&self) -> Vec<Point3<f64>> {
        self.normalized_joints.iter().map(|&c| Point3::from(c)).collect()
    }
}

/// How `predict` reads its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// A conditioned sample directory (`sample.ply` + `joints.json`).
    ConditionedSample,
    /// A mesh, or a cloud that still needs normalization and normals.
    Raw,
    /// A cloud already normalized and carrying normals.
    ConditionedCloud,
}

#[derive(Clone, Debug)]
pub struct PredictOutcome {
    pub source: String,
    pub cloud_points: usize,
    pub normalized: Vec<Point3<f64>>,
    pub joints: Vec<Point3<f64>>,
    pub scale: ScaleRecord,
    pub conditioning_seconds: f64,
    pub inference_seconds: f64,
}

/// Guesses the input kind: directories are conditioned samples, files are
/// raw unless `conditioned` is set.
pub fn input_kind(path: &Path, conditioned: bool) -> InputKind {
    if path.is_dir() {
        InputKind::ConditionedSample
    } else if conditioned {
        InputKind::ConditionedCloud
    } else {
        InputKind::Raw
    }
}

fn read_raw_cloud(path: &Path) -> Result<PointCloud> {
    let is_ply = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    if is_ply {
        let file = ply::read_ply(path)?;
        if file.element("face").is_some_and(|f| f.count > 0) {
            return Ok(mesh_to_pointcloud(&ply::read_mesh(path)?));
        }
        return Ok(PointCloud::new(ply::read_cloud(path)?.points));
    }
    Ok(mesh_to_pointcloud(&geometry::io::read_mesh(path)?))
}

/// Runs the network on one input, conditioning it first when needed.
pub fn predict(checkpoint: &Checkpoint, input: &Path, kind: InputKind, up: UpAxis, k_normals: usize) -> Result<PredictOutcome> {
    let start = Instant::now();
    let min = checkpoint.model.config().min_points();
    let too_few = |n: usize| {
        CoreError::Contract(format!(
            "{} has {n} points but this model needs at least {min} (k_neighbors + 1); use a denser cloud",
            input.display()
        ))
    };
    let (cloud, scale) = match kind {
        InputKind::ConditionedSample => {
            let s = load_sample(input)?;
            (s.cloud, s.scale)
        }
        InputKind::ConditionedCloud => {
            let cloud = ply::read_cloud(input)?;
            (cloud, ScaleRecord::identity())
        }
        InputKind::Raw => {
            let raw = read_raw_cloud(input)?;
            if raw.len() < min.max(k_normals + 1) {
                return Err(too_few(raw.len()));
            }
            let (cloud, _, scale, _) = condition_cloud(&raw, &[], up, k_normals)?;
            (cloud, scale)
        }
    };
    if cloud.len() < min {
        return Err(too_few(cloud.len()));
    }
    let conditioning_seconds = start.elapsed().as_secs_f64();
    let t = Instant::now();
    let prediction = checkpoint.model.predict(&cloud)?;
    let inference_seconds = t.elapsed().as_secs_f64();
    let joints = prediction.joints.iter().map(|p| scale.invert(p)).collect();
    Ok(PredictOutcome {
        source: input.display().to_string(),
        cloud_points: cloud.len(),
        normalized: prediction.joints,
        joints,
        scale,
        conditioning_seconds,
        inference_seconds,
    })
}

/// Writes `joints.json` and `skeleton.ply` (joints plus parent-child edges).
pub fn write_prediction(dir: &Path, checkpoint: &Checkpoint, outcome: &PredictOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let stamp = provenance::stamp(&provenance::config_hash(&checkpoint.header));
    let skeleton = Skeleton::from_positions(&checkpoint.header.joints, &outcome.joints)?;
    let file = PredictionFile {
        source: outcome.source.clone(),
        stamp: stamp.clone(),
        names: skeleton.joints().iter().map(|j| j.name.clone()).collect(),
        joints: outcome.joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        normalized_joints: outcome.normalized.iter().map(|p| [p.x, p.y, p.z]).collect(),
        scale: outcome.scale,
    };
    atomic_write(&dir.join(JOINTS_FILE), &to_json_bytes(&file))?;
    let edges: Vec<[u32; 2]> = skeleton
        .joints()
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.parent.map(|p| [p as u32, i as u32]))
        .collect();
    ply::write_points_edges(&dir.join(SKELETON_FILE), &outcome.joints, &edges, &[stamp])?;
    Ok(())
}
