use std::path::Path;

use geometry::io::{atomic_write, ply};
use geometry::{
    estimate_normals, mesh_to_pointcloud, normalize_cloud, PointCloud, ScaleRecord, TriMesh, UpAxis,
};
use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rigdata::files::{
    read_joints, sample_dir, to_json_bytes, DatasetManifest, JointsFile, Split, JOINTS_FILE, MESH_FILE, SAMPLE_FILE,
};
use crate::rigdata::skeleton::Skeleton;

/// A conditioned training or evaluation example in normalized space.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub cloud: PointCloud,
    pub joints: Vec<Point3<f64>>,
    pub scale: ScaleRecord,
}

impl Sample {
    /// Joints inside the axis-aligned bounds of the cloud.
    pub fn joints_within_bounds(&self) -> bool {
        let Some((lo, hi)) = geometry::mesh::bounds(&self.cloud.points) else {
            return false;
        };
        self.joints
            .iter()
            .all(|j| (0..3).all(|a| lo[a] <= j[a] && j[a] <= hi[a]))
    }
}

fn quantize_point(p: &Point3<f64>) -> Point3<f64> {
    p.map(|c| c as f32 as f64)
}

fn quantize_normal(n: &Vector3<f64>) -> Vector3<f64> {
    n.map(|c| c as f32 as f64)
}

/// Normalized cloud with estimated normals, plus the normalization record.
///
/// Coordinates and normals are rounded to `f32`, the precision of the
/// `sample.ply` format, so a sample built in memory equals one read back
/// from disk.
pub fn condition_cloud(
    cloud: &PointCloud,
    joints: &[Point3<f64>],
    up: UpAxis,
    k_normals: usize,
) -> Result<(PointCloud, Vec<Point3<f64>>, ScaleRecord, Vec<usize>)> {
    let normalized = normalize_cloud(&PointCloud::new(cloud.points.clone()), joints, up)?;
    let points: Vec<Point3<f64>> = normalized.geometry.points.iter().map(quantize_point).collect();
    let est = estimate_normals(&PointCloud::new(points), k_normals)?;
    let normals: Vec<Vector3<f64>> = est
        .cloud
        .normals
        .as_ref()
        .expect("estimate_normals fills normals")
        .iter()
        .map(quantize_normal)
        .collect();
    let cloud = PointCloud::with_normals(est.cloud.points, normals)?;
    Ok((cloud, normalized.joints, normalized.record, est.degenerate))
}

/// Conditioned sample and the mesh in the same normalized frame.
#[derive(Clone, Debug)]
pub struct SampleBuild {
    pub sample: Sample,
    pub normalized_mesh: TriMesh,
    pub degenerate_normals: usize,
}

/// Mesh vertices to cloud, normalization to unit height (same transform on
/// the joints), then normal estimation.
pub fn make_sample(
    id: &str,
    mesh: &TriMesh,
    skeleton: &Skeleton,
    up: UpAxis,
    k_normals: usize,
) -> Result<SampleBuild> {
    let cloud = mesh_to_pointcloud(mesh);
    let (cloud, joints, scale, degenerate) =
        condition_cloud(&cloud, &skeleton.positions(), up, k_normals)?;
    let normalized_mesh =
        mesh.with_vertices(mesh.vertices().iter().map(|v| scale.apply(v)).collect())?;
    Ok(SampleBuild {
        sample: Sample {
            id: id.to_string(),
            cloud,
            joints,
            scale,
        },
        normalized_mesh,
        degenerate_normals: degenerate.len(),
    })
}

/// Writes `sample.ply`, `joints.json` and the normalized `mesh.ply`.
pub fn save_sample(dir: &Path, build: &SampleBuild, comments: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let s = &build.sample;
    ply::write_cloud(&dir.join(SAMPLE_FILE), &s.cloud, comments)?;
    ply::write_mesh(&dir.join(MESH_FILE), &build.normalized_mesh, comments)?;
    let joints = JointsFile {
        source_id: s.id.clone(),
        joints: s.joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        scale: s.scale,
    };
    atomic_write(&dir.join(JOINTS_FILE), &to_json_bytes(&joints))?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<Sample> {
    let cloud_path = dir.join(SAMPLE_FILE);
    let cloud = ply::read_cloud(&cloud_path)?;
    if cloud.normals.is_none() {
        return Err(CoreError::file(cloud_path, "conditioned sample lacks normals"));
    }
    let joints = read_joints(&dir.join(JOINTS_FILE))?;
    Ok(Sample {
        id: joints.source_id.clone(),
        cloud,
        joints: joints.points(),
        scale: joints.scale,
    })
}

/// Every conditioned sample of one split, in manifest order.
pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    manifest
        .split(split)
        .par_iter()
        .map(|id| {
            let dir = sample_dir(root, id);
            let sample = load_sample(&dir)?;
            if sample.joints.len() != manifest.joints.len() {
                return Err(CoreError::file(
                    dir.join(JOINTS_FILE),
                    format!("has {} joints, manifest lists {}", sample.joints.len(), manifest.joints.len()),
                ));
            }
            Ok(Sample { id: id.clone(), ..sample })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_min: 0.8,
            scale_max: 1.2,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            scale_min: 1.0,
            scale_max: 1.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }
}

/// One uniform scale for points and joints, then clipped Gaussian jitter
/// on the points only. Normals are left as they are.
pub fn augment<R: Rng + ?Sized>(
    cloud: &PointCloud,
    joints: &[Point3<f64>],
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(PointCloud, Vec<Point3<f64>>)> {
    if !(config.scale_min > 0.0 && config.scale_min <= config.scale_max)
        || !(config.jitter_sigma >= 0.0 && config.jitter_clip >= 0.0)
    {
        return Err(CoreError::Config(format!("invalid augmentation settings {config:?}")));
    }
    let s = if config.scale_min < config.scale_max {
        rng.random_range(config.scale_min..=config.scale_max)
    } else {
        config.scale_min
    };
    let mut points: Vec<Point3<f64>> = cloud.points.iter().map(|p| p * s).collect();
    let joints = joints.iter().map(|j| j * s).collect();
    if config.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, config.jitter_sigma)
            .map_err(|e| CoreError::Config(format!("jitter: {e}")))?;
        let clip = config.jitter_clip;
        for p in &mut points {
            for c in p.iter_mut() {
                *c += normal.sample(rng).clamp(-clip, clip);
            }
        }
    }
    Ok((
        PointCloud {
            points,
            normals: cloud.normals.clone(),
        },
        joints,
    ))
}
