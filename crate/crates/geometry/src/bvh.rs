//! Bounding-volume hierarchy and ray/triangle intersection.
//!
//! Both the accelerated and the brute-force paths feed the same per-triangle
//! test and the same hit post-processing, so their results are identical.

use nalgebra::{Point3, Vector3};

use crate::error::{GeometryError, Result};
use crate::mesh::TriMesh;

const LEAF_SIZE: usize = 4;
/// Inclusive tolerance on barycentric coordinates.
const BARY_EPS: f64 = 1e-9;
/// Ray origin offset and hit-merging tolerance, relative to the scene diagonal.
const T_EPS_REL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    origin: Point3<f64>,
    direction: Vector3<f64>,
}

impl Ray {
    /// Direction must have unit length within 1e-9.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        if !origin.coords.iter().chain(direction.iter()).all(|c| c.is_finite()) {
            return Err(GeometryError::Contract("ray has non-finite components".into()));
        }
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::Contract(format!(
                "ray direction has length {}",
                direction.norm()
            )));
        }
        Ok(Ray { origin, direction })
    }

    /// Normalizes `direction` first.
    pub fn towards(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let len = direction.norm();
        if !(len > 0.0 && len.is_finite()) {
            return Err(GeometryError::Contract("ray direction is zero".into()));
        }
        Ray::new(origin, direction / len)
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    pub point: Point3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Point3::from([f64::INFINITY; 3]),
            max: Point3::from([f64::NEG_INFINITY; 3]),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    fn padded(&self, pad: f64) -> Aabb {
        let d = Vector3::repeat(pad);
        Aabb {
            min: self.min - d,
            max: self.max + d,
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    /// Entry parameter of the ray into the box, if it enters at all.
    fn entry(&self, ray: &Ray) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = ray.origin[a];
            let d = ray.direction[a];
            if d == 0.0 {
                if o < self.min[a] || o > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut lo, mut hi) = ((self.min[a] - o) * inv, (self.max[a] - o) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Immutable BVH over the triangles of a mesh. Owns a copy of the mesh.
#[derive(Clone, Debug)]
pub struct Bvh {
    mesh: TriMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
    t_eps: f64,
}

impl Bvh {
    /// Median split along the longest axis of the centroid bounds.
    pub fn build(mesh: &TriMesh) -> Result<Self> {
        let faces = mesh.faces().len();
        if faces == 0 {
            return Err(GeometryError::Contract("cannot build a BVH over an empty mesh".into()));
        }
        let boxes: Vec<Aabb> = (0..faces)
            .map(|f| {
                let mut b = Aabb::empty();
                mesh.triangle(f).iter().for_each(|p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<Point3<f64>> = boxes
            .iter()
            .map(|b| nalgebra::center(&b.min, &b.max))
            .collect();
        let scene = boxes.iter().fold(Aabb::empty(), |acc, b| acc.merge(b));
        let diag = scene.diagonal().max(f64::MIN_POSITIVE);
        let mut bvh = Bvh {
            mesh: mesh.clone(),
            nodes: Vec::with_capacity(2 * faces / LEAF_SIZE + 1),
            order: (0..faces).collect(),
            t_eps: T_EPS_REL * diag,
        };
        // Boxes are padded so hits accepted by the inclusive barycentric
        // tolerance are never culled by traversal.
        let pad = 1e-7 * diag;
        bvh.build_node(&boxes, &centroids, 0, faces, pad);
        Ok(bvh)
    }

    fn build_node(
        &mut self,
        boxes: &[Aabb],
        centroids: &[Point3<f64>],
        start: usize,
        end: usize,
        pad: f64,
    ) -> usize {
        let bounds = self.order[start..end]
            .iter()
            .fold(Aabb::empty(), |acc, &f| acc.merge(&boxes[f]))
            .padded(pad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut cbox = Aabb::empty();
        self.order[start..end].iter().for_each(|&f| cbox.grow(&centroids[f]));
        let extent = cbox.max - cbox.min;
        let axis = extent.imax();
        let mid = (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(boxes, centroids, start, start + mid, pad);
        let right = self.build_node(boxes, centroids, start + mid, end, pad);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .count()
    }

    /// Checks that every triangle sits in exactly one leaf and that child
    /// boxes lie inside their parent.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![0usize; self.mesh.faces().len()];
        for node in &self.nodes {
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &f in &self.order[start..end] {
                        seen[f] += 1;
                    }
                }
                NodeKind::Inner { left, right } => {
                    for child in [left, right] {
                        if !node.bounds.contains(&self.nodes[child].bounds) {
                            return Err(GeometryError::Data(format!(
                                "child {child} escapes its parent box"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(f) = seen.iter().position(|&c| c != 1) {
            return Err(GeometryError::Data(format!(
                "triangle {f} appears in {} leaves",
                seen[f]
            )));
        }
        Ok(())
    }

    /// Every intersection with `t` above the self-hit epsilon, ascending.
    pub fn raycast_all(&self, ray: &Ray) -> Vec<Hit> {
        let mut hits = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bounds.entry(ray).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &f in &self.order[start..end] {
                        if let Some(h) = self.test(ray, f) {
                            hits.push(h);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        finish_hits(hits, self.t_eps)
    }

    /// Nearest intersection; equal to the first element of [`Bvh::raycast_all`].
    pub fn raycast_first(&self, ray: &Ray) -> Option<Hit> {
        let mut hits: Vec<Hit> = Vec::new();
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            match node.bounds.entry(ray) {
                Some(t) if t <= best + self.t_eps => {}
                _ => continue,
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &f in &self.order[start..end] {
                        if let Some(h) = self.test(ray, f) {
                            if h.t <= best + self.t_eps {
                                best = best.min(h.t);
                                hits.push(h);
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        hits.retain(|h| h.t <= best + self.t_eps);
        finish_hits(hits, self.t_eps).into_iter().next()
    }

    /// Crossing-number test for watertight meshes: the parity of surface
    /// crossings along three fixed skew rays, decided by majority.
    pub fn contains_point(&self, p: &Point3<f64>) -> bool {
        const DIRECTIONS: [[f64; 3]; 3] = [
            [0.2672612419124244, 0.5345224838248488, 0.8017837257372732],
            [-0.7071067811865475, 0.1414213562373095, -0.6928203230275509],
            [0.4242640687119285, -0.8485281374238570, 0.3162277660168379],
        ];
        let odd = DIRECTIONS
            .iter()
            .filter(|d| {
                let ray = Ray::towards(*p, Vector3::from(**d)).expect("fixed unit directions");
                self.raycast_all(&ray).len() % 2 == 1
            })
            .count();
        odd >= 2
    }

    /// Reference path that tests every triangle.
    pub fn raycast_all_brute_force(&self, ray: &Ray) -> Vec<Hit> {
        let hits = (0..self.mesh.faces().len())
            .filter_map(|f| self.test(ray, f))
            .collect();
        finish_hits(hits, self.t_eps)
    }

    fn test(&self, ray: &Ray, face: usize) -> Option<Hit> {
        let [a, b, c] = self.mesh.triangle(face);
        let t = moller_trumbore(ray, &a, &b, &c)?;
        (t > self.t_eps).then(|| Hit {
            t,
            triangle: face,
            point: ray.at(t),
        })
    }
}

/// Ray parameter of the intersection with triangle `abc`, edges inclusive.
pub fn moller_trumbore(ray: &Ray, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(-BARY_EPS..=1.0 + BARY_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Sorts by `(t, triangle)` and collapses hits within `tol` of a group's
/// first hit into one, keeping the lowest triangle index. Rays crossing a
/// shared edge or vertex thus count the surface once.
fn finish_hits(mut hits: Vec<Hit>, tol: f64) -> Vec<Hit> {
    hits.sort_by(|x, y| x.t.total_cmp(&y.t).then(x.triangle.cmp(&y.triangle)));
    let mut out: Vec<Hit> = Vec::with_capacity(hits.len());
    let mut group_t = f64::NEG_INFINITY;
    for h in hits {
        match out.last_mut() {
            Some(last) if h.t - group_t <= tol => {
                if h.triangle < last.triangle {
                    *last = h;
                }
            }
            _ => {
                group_t = h.t;
                out.push(h);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriMesh {
        TriMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let bvh = Bvh::build(&tri()).unwrap();
        assert_eq!(bvh.node_count(), 1);
        assert_eq!(bvh.leaf_count(), 1);
        bvh.check_invariants().unwrap();
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let mesh = TriMesh::new(vec![], vec![]).unwrap();
        assert!(Bvh::build(&mesh).is_err());
    }

    #[test]
    fn hit_and_miss() {
        let bvh = Bvh::build(&tri()).unwrap();
        let down = Vector3::new(0.0, 0.0, -1.0);
        let hit = bvh.raycast_first(&Ray::new(Point3::new(0.25, 0.25, 1.0), down).unwrap()).unwrap();
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!(bvh.raycast_all(&Ray::new(Point3::new(0.9, 0.9, 1.0), down).unwrap()).is_empty());
    }

    #[test]
    fn ray_requires_unit_direction() {
        assert!(Ray::new(Point3::origin(), Vector3::new(0.0, 0.0, 2.0)).is_err());
        assert!(Ray::towards(Point3::origin(), Vector3::new(0.0, 0.0, 2.0)).is_ok());
    }
}
