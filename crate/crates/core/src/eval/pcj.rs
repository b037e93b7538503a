use geometry::{Bvh, Ray};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rigdata::skeleton::{Category, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcjConfig {
    /// Rays per bone fan.
    pub ray_count: usize,
    /// Origin step toward the parent, as a fraction of the parent bone.
    pub step_fraction: f64,
    pub max_steps: usize,
}

impl Default for PcjConfig {
    fn default() -> Self {
        PcjConfig {
            ray_count: 64,
            step_fraction: 0.1,
            max_steps: 9,
        }
    }
}

/// `0.01, 0.02, …, 1.00`.
pub fn default_factors() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// Unit vectors spanning the plane perpendicular to `axis`.
fn perpendicular_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = axis.abs();
    let helper = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// First-hit points of the circular ray fans around every bone that
/// contains `joint`, cast from `origin`.
fn fan_hits(bvh: &Bvh, skeleton: &Skeleton, joint: usize, origin: &Point3<f64>, ray_count: usize) -> Result<Vec<Point3<f64>>> {
    let mut hits = Vec::new();
    for (p, c) in skeleton.bones() {
        if p != joint && c != joint {
            continue;
        }
        let axis = skeleton.joint(c).head - skeleton.joint(p).head;
        let len = axis.norm();
        if len == 0.0 {
            continue;
        }
        let (e1, e2) = perpendicular_basis(&(axis / len));
        for m in 0..ray_count {
            let angle = std::f64::consts::TAU * m as f64 / ray_count as f64;
            let ray = Ray::new(*origin, e1 * angle.cos() + e2 * angle.sin())?;
            if let Some(hit) = bvh.raycast_first(&ray) {
                hits.push(hit.point);
            }
        }
    }
    Ok(hits)
}

/// Base distance threshold of one ground-truth joint: the mean distance to
/// the nearest half of the pooled fan hits. `None` when every origin along
/// the walk toward the parent misses the mesh.
pub fn pcj_threshold(bvh: &Bvh, skeleton: &Skeleton, joint: usize, config: &PcjConfig) -> Result<Option<f64>> {
    if joint >= skeleton.len() {
        return Err(CoreError::Contract(format!("joint {joint} out of range")));
    }
    if !skeleton.bones().iter().any(|&(p, c)| p == joint || c == joint) {
        return Err(CoreError::Contract(format!(
            "joint '{}' belongs to no bone",
            skeleton.joint(joint).name
        )));
    }
    if config.ray_count == 0 {
        return Err(CoreError::Config("ray_count must be positive".into()));
    }
    let gt = skeleton.joint(joint).head;
    let parent = skeleton.joint(joint).parent.map(|p| skeleton.joint(p).head);
    for step in 0..=config.max_steps {
        let origin = match (step, parent) {
            (0, _) => gt,
            (_, Some(p)) => gt + (p - gt) * (config.step_fraction * step as f64),
            (_, None) => break,
        };
        let hits = fan_hits(bvh, skeleton, joint, &origin, config.ray_count)?;
        if hits.is_empty() {
            continue;
        }
        let mut d: Vec<f64> = hits.iter().map(|h| (h - gt).norm()).collect();
        d.sort_by(f64::total_cmp);
        let half = d.len().div_ceil(2);
        return Ok(Some(d[..half].iter().sum::<f64>() / half as f64));
    }
    log::warn!(
        "every ray around joint '{}' missed the mesh; it is excluded from PCJ",
        skeleton.joint(joint).name
    );
    Ok(None)
}

/// Thresholds for every joint of one sample.
pub fn sample_thresholds(bvh: &Bvh, skeleton: &Skeleton, config: &PcjConfig) -> Result<Vec<Option<f64>>> {
    (0..skeleton.len())
        .map(|j| pcj_threshold(bvh, skeleton, j, config))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcjCurve {
    pub factors: Vec<f64>,
    pub body: Vec<f64>,
    pub fingers: Vec<f64>,
    /// Joints without a threshold, as `(sample, joint)`.
    pub excluded: Vec<(usize, usize)>,
}

/// Fraction of body and finger joints with `‖pred − gt‖ ≤ factor·threshold`.
pub fn pcj_curve(
    preds: &[Vec<Point3<f64>>],
    gts: &[Vec<Point3<f64>>],
    thresholds: &[Vec<Option<f64>>],
    categories: &[Category],
    factors: &[f64],
) -> Result<PcjCurve> {
    if preds.len() != gts.len() || gts.len() != thresholds.len() {
        return Err(CoreError::Contract(format!(
            "{} predictions, {} ground truths and {} threshold sets",
            preds.len(),
            gts.len(),
            thresholds.len()
        )));
    }
    let mut excluded = Vec::new();
    // (distance, threshold, is finger) for every scored joint.
    let mut scored = Vec::new();
    for (s, ((p, g), t)) in preds.iter().zip(gts).zip(thresholds).enumerate() {
        if p.len() != g.len() || g.len() != t.len() || g.len() != categories.len() {
            return Err(CoreError::Contract(format!("sample {s}: joint counts disagree")));
        }
        for j in 0..g.len() {
            match t[j] {
                Some(th) => scored.push(((p[j] - g[j]).norm(), th, categories[j].is_finger())),
                None => excluded.push((s, j)),
            }
        }
    }
    let fraction = |finger: bool, f: f64| {
        let group: Vec<_> = scored.iter().filter(|x| x.2 == finger).collect();
        if group.is_empty() {
            return f64::NAN;
        }
        group.iter().filter(|(d, th, _)| *d <= f * th).count() as f64 / group.len() as f64
    };
    Ok(PcjCurve {
        factors: factors.to_vec(),
        body: factors.iter().map(|&f| fraction(false, f)).collect(),
        fingers: factors.iter().map(|&f| fraction(true, f)).collect(),
        excluded,
    })
}
