use nalgebra::{Isometry3, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-4;

/// Sparse per-vertex `(joint, weight)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkinWeights {
    vertices: Vec<Vec<(u32, f64)>>,
}

impl SkinWeights {
    /// Weights must be finite and non-negative and sum to 1 per vertex.
    pub fn new(vertices: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let w = SkinWeights { vertices };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (v, pairs) in self.vertices.iter().enumerate() {
            if let Some(&(j, w)) = pairs.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
                return Err(GeometryError::Data(format!(
                    "vertex {v} has invalid weight {w} for joint {j}"
                )));
            }
            let sum: f64 = pairs.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(GeometryError::Data(format!(
                    "weights of vertex {v} sum to {sum}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, v: usize) -> &[(u32, f64)] {
        &self.vertices[v]
    }

    pub fn max_joint(&self) -> Option<u32> {
        self.vertices.iter().flatten().map(|(j, _)| *j).max()
    }
}

/// Skinning transform of each bone: its posed world transform composed with
/// the inverse of its bind transform.
pub fn skinning_transforms(
    world: &[Isometry3<f64>],
    bind: &[Isometry3<f64>],
) -> Result<Vec<Isometry3<f64>>> {
    if world.len() != bind.len() {
        return Err(GeometryError::Contract(format!(
            "{} world transforms for {} bind transforms",
            world.len(),
            bind.len()
        )));
    }
    Ok(world.iter().zip(bind).map(|(w, b)| w * b.inverse()).collect())
}

/// `v' = Σ_b w_b · T_b(v)`.
pub fn linear_blend_skinning(
    vertices: &[Point3<f64>],
    weights: &SkinWeights,
    transforms: &[Isometry3<f64>],
) -> Result<Vec<Point3<f64>>> {
    if vertices.len() != weights.len() {
        return Err(GeometryError::Contract(format!(
            "{} vertices but {} weight rows",
            vertices.len(),
            weights.len()
        )));
    }
    if let Some(j) = weights.max_joint() {
        if j as usize >= transforms.len() {
            return Err(GeometryError::Contract(format!(
                "weights reference joint {j} but only {} transforms were given",
                transforms.len()
            )));
        }
    }
    Ok(vertices
        .iter()
        .zip(&weights.vertices)
        .map(|(v, pairs)| {
            let acc = pairs.iter().fold(nalgebra::Vector3::zeros(), |acc, &(j, w)| {
                acc + (transforms[j as usize] * v).coords * w
            });
            Point3::from(acc)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, Vector3};

    fn verts() -> Vec<Point3<f64>> {
        vec![Point3::new(0.0, 1.0, 2.0), Point3::new(-3.0, 0.5, 0.0)]
    }

    #[test]
    fn identity_is_identity() {
        let w = SkinWeights::new(vec![vec![(0, 1.0)], vec![(0, 0.25), (1, 0.75)]]).unwrap();
        let out = linear_blend_skinning(&verts(), &w, &[Isometry3::identity(); 2]).unwrap();
        assert_eq!(out, verts());
    }

    #[test]
    fn single_bone_translation() {
        let w = SkinWeights::new(vec![vec![(0, 1.0)]; 2]).unwrap();
        let t = Vector3::new(0.5, -1.0, 2.0);
        let out = linear_blend_skinning(&verts(), &w, &[Translation3::from(t).into()]).unwrap();
        for (a, b) in out.iter().zip(verts()) {
            assert!((a - (b + t)).norm() < 1e-15);
        }
    }

    #[test]
    fn weight_sum_is_checked() {
        assert!(SkinWeights::new(vec![vec![(0, 0.9)]]).is_err());
        assert!(SkinWeights::new(vec![vec![(0, 1.2), (1, -0.2)]]).is_err());
        assert!(SkinWeights::new(vec![vec![(0, 0.99995)]]).is_ok());
    }
}
