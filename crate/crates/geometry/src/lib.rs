//! Spatial kernels for point clouds and triangle meshes.

pub mod bvh;
mod error;
pub mod io;
pub mod knn;
pub mod mesh;
pub mod normalize;
pub mod normals;
pub mod skinning;

pub use bvh::{Aabb, Bvh, Hit, Ray};
pub use error::{GeometryError, Result};
pub use knn::KnnIndex;
pub use mesh::{mesh_to_pointcloud, PointCloud, TriMesh};
pub use normalize::{normalize_cloud, normalize_mesh, Normalized, ScaleRecord, UpAxis};
pub use normals::{estimate_normals, NormalConfig, NormalEstimate};
pub use skinning::{linear_blend_skinning, skinning_transforms, SkinWeights};
