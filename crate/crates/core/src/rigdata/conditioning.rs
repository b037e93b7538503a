//! Leaf-bone correction and collision-checked pose randomization.

use std::collections::BTreeMap;
use std::path::Path;

use geometry::{linear_blend_skinning, skinning_transforms, Bvh, Ray};
use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rigdata::files::{read_json, RiggedModel};
use crate::rigdata::skeleton::Skeleton;

pub const LEAF_LENGTH_FRACTION: f64 = 0.95;
pub const DEFAULT_RETRIES: usize = 10;

/// Per-axis `[low, high]` Euler bounds in degrees.
pub type AxisBounds = [[f64; 2]; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationLimits {
    pub default: AxisBounds,
    #[serde(default)]
    pub joints: BTreeMap<String, AxisBounds>,
}

impl RotationLimits {
    pub const MAX_DEGREES: f64 = 15.0;

    /// `±degrees` on every axis of every joint.
    pub fn symmetric(degrees: f64) -> Result<Self> {
        let limits = RotationLimits {
            default: [[-degrees, degrees]; 3],
            joints: BTreeMap::new(),
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn zero() -> Self {
        RotationLimits {
            default: [[0.0; 2]; 3],
            joints: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, bounds) in std::iter::once(("default", &self.default))
            .chain(self.joints.iter().map(|(k, v)| (k.as_str(), v)))
        {
            for [lo, hi] in bounds {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi)
                    || lo.abs() > Self::MAX_DEGREES
                    || hi.abs() > Self::MAX_DEGREES
                {
                    return Err(CoreError::Config(format!(
                        "rotation limits for '{name}' must satisfy -15 <= low <= high <= 15, got [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let limits: RotationLimits = read_json(path)?;
        limits.validate().map_err(|e| CoreError::file(path, e))?;
        Ok(limits)
    }

    pub fn for_joint(&self, name: &str) -> AxisBounds {
        self.joints.get(name).copied().unwrap_or(self.default)
    }
}

/// Intrinsic XYZ Euler rotation, angles in degrees.
pub fn euler_xyz(degrees: [f64; 3]) -> UnitQuaternion<f64> {
    let [x, y, z] = degrees.map(f64::to_radians);
    let r = Rotation3::from_axis_angle(&Vector3::x_axis(), x)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), y)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), z);
    UnitQuaternion::from_rotation_matrix(&r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub joint: String,
    pub old_length: f64,
    pub new_length: f64,
    /// Distance to the first surface hit; `None` when the ray missed.
    pub hit: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LeafCorrection {
    pub skeleton: Skeleton,
    pub records: Vec<LeafRecord>,
    pub warnings: Vec<String>,
}

/// Shortens every leaf bone whose tail pokes out of the mesh to 95% of the
/// distance from its head to the first surface hit.
pub fn correct_leaf_bones(bvh: &Bvh, skeleton: &Skeleton) -> Result<LeafCorrection> {
    let mut heads = skeleton.positions();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (p, c) in skeleton.leaf_bones() {
        let name = &skeleton.joint(c).name;
        let origin = heads[p];
        let bone = heads[c] - origin;
        let length = bone.norm();
        if length == 0.0 {
            warnings.push(format!("leaf bone ending at '{name}' has zero length"));
            continue;
        }
        let dir = bone / length;
        let ray = Ray::new(origin, dir)?;
        match bvh.raycast_first(&ray) {
            None => {
                warnings.push(format!("ray along the leaf bone ending at '{name}' misses the mesh"));
                records.push(LeafRecord {
                    joint: name.clone(),
                    old_length: length,
                    new_length: length,
                    hit: None,
                });
            }
            Some(hit) => {
                let new_length = if hit.t < length {
                    LEAF_LENGTH_FRACTION * hit.t
                } else {
                    length
                };
                if new_length != length {
                    heads[c] = origin + dir * new_length;
                }
                records.push(LeafRecord {
                    joint: name.clone(),
                    old_length: length,
                    new_length,
                    hit: Some(hit.t),
                });
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LeafCorrection {
        skeleton: skeleton.with_positions(&heads)?,
        records,
        warnings,
    })
}

/// For every bone, in [`Skeleton::bones`] order, the number of surface
/// crossings along the ray from its head through its tail.
pub fn baseline_bone_hits(bvh: &Bvh, skeleton: &Skeleton) -> Vec<usize> {
    skeleton
        .bones()
        .iter()
        .map(|&(p, c)| {
            let origin = skeleton.joint(p).head;
            match Ray::towards(origin, skeleton.joint(c).head - origin) {
                Ok(ray) => bvh.raycast_all(&ray).len(),
                Err(_) => 0,
            }
        })
        .collect()
}

/// Joints that are not strictly inside the mesh by the crossing-number test.
pub fn joints_outside(bvh: &Bvh, skeleton: &Skeleton) -> Vec<String> {
    skeleton
        .joints()
        .iter()
        .filter(|j| !bvh.contains_point(&j.head))
        .map(|j| j.name.clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRotation {
    pub joint: String,
    pub degrees: [f64; 3],
    pub attempts: usize,
}

#[derive(Clone, Debug)]
pub struct PoseResult {
    pub mesh: geometry::TriMesh,
    pub skeleton: Skeleton,
    pub accepted: Vec<AcceptedRotation>,
    pub rejected: usize,
}

/// Skinning transforms for per-joint local rotations about the bind heads,
/// with world-aligned bind frames. Returns the transforms and posed heads.
fn forward_kinematics(
    skeleton: &Skeleton,
    bind: &[Point3<f64>],
    local: &[UnitQuaternion<f64>],
) -> Result<(Vec<Isometry3<f64>>, Vec<Point3<f64>>)> {
    let n = skeleton.len();
    let mut world: Vec<Isometry3<f64>> = Vec::with_capacity(n);
    let bind_frames: Vec<Isometry3<f64>> = bind
        .iter()
        .map(|h| Isometry3::from_parts(Translation3::from(h.coords), UnitQuaternion::identity()))
        .collect();
    for j in 0..n {
        let parent_skin = match skeleton.joint(j).parent {
            Some(p) => world[p] * bind_frames[p].inverse(),
            None => Isometry3::identity(),
        };
        let about_head = bind_frames[j] * Isometry3::from_parts(Translation3::identity(), local[j]);
        world.push(parent_skin * about_head);
    }
    let skin = skinning_transforms(&world, &bind_frames)?;
    let heads = world.iter().map(|w| Point3::from(w.translation.vector)).collect();
    Ok((skin, heads))
}

/// Rotates bones in a seeded random order, keeping a rotation only when
/// the deformed mesh leaves every bone's crossing count unchanged.
pub fn randomize_pose(
    model: &RiggedModel,
    limits: &RotationLimits,
    seed: u64,
    retries: usize,
) -> Result<PoseResult> {
    limits.validate()?;
    let skeleton = &model.skeleton;
    let bind = skeleton.positions();
    let baseline = baseline_bone_hits(&Bvh::build(&model.mesh)?, skeleton);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..skeleton.len())
        .filter(|&j| skeleton.joint(j).parent.is_some() && !skeleton.joint(j).leaf)
        .collect();
    order.shuffle(&mut rng);

    let mut local = vec![UnitQuaternion::identity(); skeleton.len()];
    let mut accepted = Vec::new();
    let mut rejected = 0;
    for j in order {
        let name = &skeleton.joint(j).name;
        let bounds = limits.for_joint(name);
        if bounds.iter().all(|[lo, hi]| *lo == 0.0 && *hi == 0.0) {
            continue;
        }
        for attempt in 1..=retries {
            let degrees = bounds.map(|[lo, hi]| if lo < hi { rng.random_range(lo..=hi) } else { lo });
            let mut trial = local.clone();
            trial[j] = euler_xyz(degrees);
            let (skin, heads) = forward_kinematics(skeleton, &bind, &trial)?;
            let verts = linear_blend_skinning(model.mesh.vertices(), &model.weights, &skin)?;
            let posed_mesh = model.mesh.with_vertices(verts)?;
            let posed = skeleton.with_positions(&heads)?;
            if baseline_bone_hits(&Bvh::build(&posed_mesh)?, &posed) == baseline {
                local = trial;
                accepted.push(AcceptedRotation {
                    joint: name.clone(),
                    degrees,
                    attempts: attempt,
                });
                break;
            }
            rejected += 1;
        }
    }
    if accepted.is_empty() {
        return Ok(PoseResult {
            mesh: model.mesh.clone(),
            skeleton: skeleton.clone(),
            accepted,
            rejected,
        });
    }
    let (skin, heads) = forward_kinematics(skeleton, &bind, &local)?;
    let verts = linear_blend_skinning(model.mesh.vertices(), &model.weights, &skin)?;
    Ok(PoseResult {
        mesh: model.mesh.with_vertices(verts)?,
        skeleton: skeleton.with_positions(&heads)?,
        accepted,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_above_fifteen_degrees_are_rejected() {
        assert!(RotationLimits::symmetric(15.0).is_ok());
        assert!(RotationLimits::symmetric(15.5).is_err());
        let mut l = RotationLimits::zero();
        l.joints.insert("hand_l".into(), [[5.0, -5.0], [0.0, 0.0], [0.0, 0.0]]);
        assert!(l.validate().is_err());
    }

    #[test]
    fn euler_order_is_x_then_y_then_z() {
        let q = euler_xyz([90.0, 90.0, 0.0]);
        // Rx·Ry maps +Z to Rx(+X) = +X.
        let v = q * Vector3::z();
        assert!((v - Vector3::x()).norm() < 1e-12);
    }
}
