//! PCA normal estimation with minimum-spanning-tree orientation.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::knn::KnnIndex;
use crate::mesh::{bounds, PointCloud};

pub const DEFAULT_K_NORMALS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalConfig {
    pub k_normals: usize,
}

impl Default for NormalConfig {
    fn default() -> Self {
        NormalConfig {
            k_normals: DEFAULT_K_NORMALS,
        }
    }
}

/// Output of [`estimate_normals`].
#[derive(Clone, Debug)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighborhood had zero spread; their normal is +Z.
    pub degenerate: Vec<usize>,
}

/// Total-ordered edge weight for the spanning-tree heap.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Weight(f64);

impl Eq for Weight {}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn estimate_normals(cloud: &PointCloud, k_normals: usize) -> Result<NormalEstimate> {
    let n = cloud.len();
    if k_normals < 3 || n <= k_normals {
        return Err(GeometryError::Contract(format!(
            "normal estimation needs N > k_normals >= 3, got N={n}, k_normals={k_normals}"
        )));
    }
    cloud.validate()?;
    let flat = cloud.flat_points();
    let index = KnnIndex::kd_tree(&flat, 3)?;
    // The point itself plus its k_normals - 1 nearest others.
    let nbrs = index.knn_self(k_normals, false)?;
    let (lo, hi) = bounds(&cloud.points).expect("non-empty cloud");
    let spread_floor = 1e-24 * (hi - lo).norm_squared();

    let raw: Vec<Option<Vector3<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| pca_normal(&cloud.points, &nbrs[i * k_normals..(i + 1) * k_normals], spread_floor))
        .collect();
    let degenerate: Vec<usize> = (0..n).filter(|&i| raw[i].is_none()).collect();
    if !degenerate.is_empty() {
        log::warn!(
            "{} points have degenerate neighborhoods; their normals default to +Z",
            degenerate.len()
        );
    }
    let mut normals: Vec<Vector3<f64>> = raw.into_iter().map(|r| r.unwrap_or(Vector3::z())).collect();
    orient(&cloud.points, &mut normals, &nbrs, k_normals, &degenerate);
    let cloud = PointCloud::with_normals(cloud.points.clone(), normals)?;
    Ok(NormalEstimate { cloud, degenerate })
}

fn pca_normal(points: &[Point3<f64>], nbrs: &[u32], floor: f64) -> Option<Vector3<f64>> {
    let k = nbrs.len() as f64;
    let mean = nbrs
        .iter()
        .fold(Vector3::zeros(), |acc, &j| acc + points[j as usize].coords)
        / k;
    let cov = nbrs.iter().fold(Matrix3::zeros(), |acc, &j| {
        let d = points[j as usize].coords - mean;
        acc + d * d.transpose()
    }) / k;
    if cov.trace() <= floor {
        return None;
    }
    let eig = SymmetricEigen::new(cov);
    let smallest = eig.eigenvalues.imin();
    let v: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned();
    Some(v.normalize())
}

/// Propagates a consistent sign along a minimum spanning tree of the
/// symmetrized kNN graph with weights `1 - |n_i·n_j|`, then flips each
/// connected component so most of its normals point away from its centroid.
fn orient(
    points: &[Point3<f64>],
    normals: &mut [Vector3<f64>],
    nbrs: &[u32],
    k: usize,
    degenerate: &[usize],
) {
    let n = points.len();
    let mut adj: Vec<Vec<u32>> = vec![Vec::with_capacity(k); n];
    for i in 0..n {
        for &j in &nbrs[i * k..(i + 1) * k] {
            if j as usize != i {
                adj[i].push(j);
                adj[j as usize].push(i as u32);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }

    let mut visited = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(Weight, u32, u32)>> = BinaryHeap::new();
    for root in 0..n {
        if visited[root] {
            continue;
        }
        let mut component = vec![root];
        visited[root] = true;
        push_edges(root, &adj, normals, &visited, &mut heap);
        while let Some(Reverse((_, from, to))) = heap.pop() {
            let (from, to) = (from as usize, to as usize);
            if visited[to] {
                continue;
            }
            visited[to] = true;
            if normals[from].dot(&normals[to]) < 0.0 {
                normals[to] = -normals[to];
            }
            component.push(to);
            push_edges(to, &adj, normals, &visited, &mut heap);
        }

        let centroid = component
            .iter()
            .fold(Vector3::zeros(), |acc, &i| acc + points[i].coords)
            / component.len() as f64;
        let (mut outward, mut inward) = (0usize, 0usize);
        for &i in &component {
            let d = normals[i].dot(&(points[i].coords - centroid));
            if d > 0.0 {
                outward += 1;
            } else if d < 0.0 {
                inward += 1;
            }
        }
        if inward > outward {
            for &i in &component {
                normals[i] = -normals[i];
            }
        }
    }
    // Fallback normals stay fixed at +Z whatever their component did.
    for &i in degenerate {
        normals[i] = Vector3::z();
    }
}

fn push_edges(
    from: usize,
    adj: &[Vec<u32>],
    normals: &[Vector3<f64>],
    visited: &[bool],
    heap: &mut BinaryHeap<Reverse<(Weight, u32, u32)>>,
) {
    for &to in &adj[from] {
        if !visited[to as usize] {
            let w = 1.0 - normals[from].dot(&normals[to as usize]).abs();
            heap.push(Reverse((Weight(w), from as u32, to)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals_are_consistent() {
        let points: Vec<Point3<f64>> = (0..400)
            .map(|i| Point3::new((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1 + 0.013 * (i % 3) as f64, 0.0))
            .collect();
        let est = estimate_normals(&PointCloud::new(points), 10).unwrap();
        let normals = est.cloud.normals.unwrap();
        let sign = normals[0].z.signum();
        for nrm in &normals {
            assert!((nrm.z.abs() - 1.0).abs() < 1e-9);
            assert_eq!(nrm.z.signum(), sign);
        }
        assert!(est.degenerate.is_empty());
    }

    #[test]
    fn duplicate_neighborhood_falls_back() {
        let mut points = vec![Point3::new(5.0, 5.0, 5.0); 5];
        points.extend((0..40).map(|i| Point3::new((i % 7) as f64, (i / 7) as f64, ((i * 3) % 5) as f64)));
        let est = estimate_normals(&PointCloud::new(points), 4).unwrap();
        assert_eq!(est.degenerate, vec![0, 1, 2, 3, 4]);
        assert_eq!(est.cloud.normals.unwrap()[0], Vector3::z());
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3]);
        assert!(estimate_normals(&cloud, 3).is_err());
    }
}
