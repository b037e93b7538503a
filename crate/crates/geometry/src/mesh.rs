use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::error::{GeometryError, Result};

/// Face count produced by the reference remeshing step.
pub const REFERENCE_FACE_COUNT: usize = 20480;
/// Vertex count range produced by the reference remeshing step.
pub const REFERENCE_VERTEX_RANGE: (usize, usize) = (10000, 12000);

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Validates that indices are in range, faces are non-degenerate and
    /// coordinates are finite.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::Data(format!("vertex {i} is not finite")));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(GeometryError::Data(format!(
                    "face {fi} references {f:?} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::Data(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Same topology with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::Contract(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        TriMesh::new(vertices, self.faces.clone())
    }

    /// Checks the counts expected from the reference remeshing and returns
    /// one message per mismatch.
    pub fn reference_count_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.faces.len() != REFERENCE_FACE_COUNT {
            issues.push(format!(
                "mesh has {} faces, expected {REFERENCE_FACE_COUNT}",
                self.faces.len()
            ));
        }
        let (lo, hi) = REFERENCE_VERTEX_RANGE;
        if !(lo..=hi).contains(&self.vertices.len()) {
            issues.push(format!(
                "mesh has {} vertices, expected {lo}..={hi}",
                self.vertices.len()
            ));
        }
        issues
    }
}

/// Points with optional unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        PointCloud {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            normals: Some(normals),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::Data(format!("point {i} is not finite")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(GeometryError::Data(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(GeometryError::Data(format!(
                    "normal {i} has length {}",
                    normals[i].norm()
                )));
            }
        }
        Ok(())
    }

    /// Row-major `N×3` coordinates.
    pub fn flat_points(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }
}

fn coord_key(p: &Point3<f64>) -> [u64; 3] {
    // +0.0 and -0.0 are the same position
    [p.x, p.y, p.z].map(|c| if c == 0.0 { 0u64 } else { c.to_bits() })
}

/// Mesh vertices with exact duplicates removed, in first-occurrence order.
pub fn mesh_to_pointcloud(mesh: &TriMesh) -> PointCloud {
    let mut seen: HashMap<[u64; 3], ()> = HashMap::with_capacity(mesh.vertices().len());
    let points = mesh
        .vertices()
        .iter()
        .filter(|v| seen.insert(coord_key(v), ()).is_none())
        .copied()
        .collect();
    PointCloud::new(points)
}

/// Axis-aligned bounds of a point set.
pub fn bounds(points: &[Point3<f64>]) -> Option<(Point3<f64>, Point3<f64>)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (
            Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
            Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn dedup_keeps_first_occurrence_order() {
        let v = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, -0.0),
            Point3::new(0.0, 0.0, 0.0),
        ];
        let mesh = TriMesh::new(v, vec![[0, 1, 3]]).unwrap();
        let cloud = mesh_to_pointcloud(&mesh);
        assert_eq!(
            cloud.points,
            vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, -0.0)]
        );
    }

    #[test]
    fn normals_must_be_unit() {
        let p = vec![Point3::origin()];
        assert!(PointCloud::with_normals(p.clone(), vec![Vector3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(p, vec![Vector3::new(0.0, 0.0, 1.0)]).is_ok());
    }
}
