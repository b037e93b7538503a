use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::mesh::{bounds, PointCloud, TriMesh};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpAxis {
    X,
    #[default]
    Y,
    Z,
}

impl UpAxis {
    pub fn index(self) -> usize {
        match self {
            UpAxis::X => 0,
            UpAxis::Y => 1,
            UpAxis::Z => 2,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }
}

impl std::str::FromStr for UpAxis {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(UpAxis::X),
            "y" => Ok(UpAxis::Y),
            "z" => Ok(UpAxis::Z),
            other => Err(GeometryError::Contract(format!("unknown up axis '{other}'"))),
        }
    }
}

/// Uniform scale then translation: `p' = p / height + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleRecord {
    pub height: f64,
    pub translation: [f64; 3],
}

impl ScaleRecord {
    pub fn identity() -> Self {
        ScaleRecord {
            height: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        p / self.height + Vector3::from(self.translation)
    }

    pub fn invert(&self, p: &Point3<f64>) -> Point3<f64> {
        (p - Vector3::from(self.translation)) * self.height
    }

    /// Record for the given geometry: height is the extent along `up`.
    pub fn fit(points: &[Point3<f64>], up: UpAxis) -> Result<Self> {
        let (lo, hi) = bounds(points)
            .ok_or_else(|| GeometryError::Contract("cannot normalize empty geometry".into()))?;
        let height = hi[up.index()] - lo[up.index()];
        if !(height > 0.0 && height.is_finite()) {
            return Err(GeometryError::Contract(format!(
                "geometry has zero extent along the {up:?} axis"
            )));
        }
        let (lo, hi) = (lo / height, hi / height);
        let center = nalgebra::center(&lo, &hi);
        Ok(ScaleRecord {
            height,
            translation: (-center.coords).into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized<G> {
    pub geometry: G,
    pub joints: Vec<Point3<f64>>,
    pub record: ScaleRecord,
}

fn apply_all(record: &ScaleRecord, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    points.iter().map(|p| record.apply(p)).collect()
}

pub fn normalize_cloud(
    cloud: &PointCloud,
    joints: &[Point3<f64>],
    up: UpAxis,
) -> Result<Normalized<PointCloud>> {
    let record = ScaleRecord::fit(&cloud.points, up)?;
    Ok(Normalized {
        geometry: PointCloud {
            points: apply_all(&record, &cloud.points),
            normals: cloud.normals.clone(),
        },
        joints: apply_all(&record, joints),
        record,
    })
}

pub fn normalize_mesh(
    mesh: &TriMesh,
    joints: &[Point3<f64>],
    up: UpAxis,
) -> Result<Normalized<TriMesh>> {
    let record = ScaleRecord::fit(mesh.vertices(), up)?;
    Ok(Normalized {
        geometry: mesh.with_vertices(apply_all(&record, mesh.vertices()))?,
        joints: apply_all(&record, joints),
        record,
    })
}
