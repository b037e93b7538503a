//! Procedural humanoid blobs with known skeletons.
//!
//! The body is a union of capsules around the bones of the 69-joint
//! template. Meshes come from marching tetrahedra over the signed distance
//! field, so they are closed and consistently oriented. Tip joints sit just
//! beyond the surface, the way raw rigs often leave them.

use std::collections::HashMap;
use std::path::Path;

use geometry::{PointCloud, SkinWeights, TriMesh, UpAxis};
use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rigdata::conditioning::LEAF_LENGTH_FRACTION;
use crate::rigdata::files::{save_rigged_model, write_manifest, DatasetManifest, RiggedModel, SplitCounts, Splits};
use crate::rigdata::sample::{condition_cloud, Sample};
use crate::rigdata::skeleton::{template, Skeleton, FINGERS};

pub const MIN_RADIUS_STEPS: f64 = 1.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Marching grid spacing as a fraction of body height.
    pub grid_step: f64,
    /// Multiplier on every capsule radius. Radii never drop below
    /// [`MIN_RADIUS_STEPS`] grid steps.
    pub girth: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_step: 0.017,
            girth: 1.0,
        }
    }
}

impl SynthConfig {
    /// Fast, low-resolution settings.
    pub fn coarse() -> Self {
        SynthConfig {
            grid_step: 0.03,
            girth: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: Point3<f64>,
    b: Point3<f64>,
    r: f64,
}

impl Capsule {
    fn closest(&self, p: &Point3<f64>) -> Point3<f64> {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.a + ab * t
    }

    fn sdf(&self, p: &Point3<f64>) -> f64 {
        (p - self.closest(p)).norm() - self.r
    }

    /// Uniform point on the capsule surface.
    fn sample_surface<R: Rng>(&self, rng: &mut R) -> Point3<f64> {
        let axis = self.b - self.a;
        let len = axis.norm();
        let lateral = 2.0 * std::f64::consts::PI * self.r * len;
        if rng.random_range(0.0..self.area()) < lateral {
            let w = axis / len;
            let helper = if w.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let u = w.cross(&helper).normalize();
            let v = w.cross(&u);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let t = rng.random_range(0.0..1.0);
            return self.a + axis * t + (u * angle.cos() + v * angle.sin()) * self.r;
        }
        let d: Vector3<f64> = loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let center = if d.dot(&axis) >= 0.0 { self.b } else { self.a };
        center + d * self.r
    }

    fn area(&self) -> f64 {
        let pi = std::f64::consts::PI;
        2.0 * pi * self.r * (self.b - self.a).norm() + 4.0 * pi * self.r * self.r
    }
}

/// Humanoid in raw (unnormalized) coordinates, Y up, facing +Z.
#[derive(Clone, Debug)]
pub struct Humanoid {
    skeleton: Skeleton,
    capsules: Vec<Capsule>,
    height: f64,
}

fn unit_positions(rng: &mut ChaCha8Rng) -> (HashMap<String, Point3<f64>>, HashMap<String, f64>) {
    let mut pos: HashMap<String, Point3<f64>> = HashMap::new();
    let mut rad: HashMap<String, f64> = HashMap::new();
    let mut put = |name: &str, p: [f64; 3], r: f64| {
        pos.insert(name.to_string(), Point3::from(p));
        rad.insert(name.to_string(), r);
    };
    let torso = rng.random_range(0.9..1.12);
    let limb = rng.random_range(0.88..1.12);
    let arm = rng.random_range(0.93..1.07);
    let leg = rng.random_range(0.95..1.05);
    let droop = rng.random_range(0.0f64..35.0).to_radians();
    let spread = rng.random_range(0.0f64..6.0).to_radians();

    put("root", [0.0, 0.50, 0.0], 0.080 * torso);
    put("pelvis", [0.0, 0.53, 0.0], 0.085 * torso);
    for (i, y) in [0.575, 0.62, 0.665, 0.71, 0.755].iter().enumerate() {
        put(&format!("spine_0{}", i + 1), [0.0, *y, 0.0], 0.085 * torso);
    }
    put("neck_01", [0.0, 0.80, 0.0], 0.035 * limb);
    put("neck_02", [0.0, 0.835, 0.0], 0.035 * limb);
    put("head", [0.0, 0.87, 0.005], 0.065);
    put("head_end", [0.0, 1.02, 0.005], 0.0);

    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let shoulder = Point3::new(s * 0.11, 0.785, 0.0);
        let droop_rot = Rotation3::from_axis_angle(&Vector3::z_axis(), -s * droop);
        let arm_pt = |x: f64, y: f64, z: f64| -> [f64; 3] {
            let local = Vector3::new(s * (x - 0.11) * arm, y - 0.785, z);
            (shoulder + droop_rot * local).coords.into()
        };
        put(&format!("clavicle_{side}"), [s * 0.02, 0.775, 0.0], 0.045 * limb);
        put(&format!("upperarm_{side}"), shoulder.coords.into(), 0.040 * limb);
        put(&format!("lowerarm_{side}"), arm_pt(0.27, 0.785, 0.0), 0.034 * limb);
        put(&format!("hand_{side}"), arm_pt(0.42, 0.785, 0.0), 0.026 * limb);
        let bases = [
            [0.435, 0.775, 0.026],
            [0.475, 0.785, 0.018],
            [0.48, 0.785, 0.006],
            [0.475, 0.785, -0.006],
            [0.465, 0.785, -0.018],
        ];
        for (f, finger) in FINGERS.iter().enumerate() {
            let dir = if f == 0 {
                Vector3::new(0.6, -0.25, 0.76).normalize()
            } else {
                Vector3::x()
            };
            let lengths = [0.022, 0.016, 0.014, 0.024];
            let mut p = Vector3::from(bases[f]);
            for (seg, len) in ["01", "02", "03", "end"].iter().zip(lengths) {
                let r = if *seg == "end" { 0.0 } else { 0.0125 };
                put(&format!("{finger}_{seg}_{side}"), arm_pt(p.x, p.y, p.z), r);
                p += dir * len;
            }
        }

        let hip = Point3::new(s * 0.06, 0.50, 0.0);
        let spread_rot = Rotation3::from_axis_angle(&Vector3::z_axis(), s * spread);
        let leg_pt = |x: f64, y: f64, z: f64| -> [f64; 3] {
            let local = Vector3::new(x - hip.x, (y - 0.50) * leg, z);
            (hip + spread_rot * local).coords.into()
        };
        put(&format!("thigh_{side}"), hip.coords.into(), 0.058 * limb);
        put(&format!("calf_{side}"), leg_pt(s * 0.07, 0.27, 0.0), 0.042 * limb);
        put(&format!("foot_{side}"), leg_pt(s * 0.075, 0.05, -0.01), 0.032 * limb);
        put(&format!("ball_{side}"), leg_pt(s * 0.075, 0.026, 0.075), 0.026 * limb);
        put(&format!("toe_end_{side}"), leg_pt(s * 0.075, 0.026, 0.14), 0.0);
    }
    (pos, rad)
}

impl Humanoid {
    /// Seeded random proportions, pose and size.
    pub fn generate(seed: u64, config: &SynthConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pos, rad) = unit_positions(&mut rng);
        let height = rng.random_range(1.5..1.95);
        let offset = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(0.0..0.1),
            rng.random_range(-0.5..0.5),
        );
        let specs = template();
        let heads: Vec<Point3<f64>> = specs
            .iter()
            .map(|s| pos[&s.name] * height + offset)
            .collect();
        let skeleton = Skeleton::from_positions(&specs, &heads)?;
        let mut capsules = Vec::new();
        for (p, c) in skeleton.bones() {
            let r = (rad[&skeleton.joint(p).name] * config.girth).max(MIN_RADIUS_STEPS * config.grid_step) * height;
            let a = heads[p];
            let mut b = heads[c];
            if skeleton.joint(c).leaf {
                // Stop short so the tip joint lies outside the surface.
                let len = (b - a).norm();
                b = a + (b - a) * (0.5 * (len - r).max(0.0) / len);
            }
            capsules.push(Capsule { a, b, r });
        }
        Ok(Humanoid {
            skeleton,
            capsules,
            height,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        self.capsules
            .iter()
            .map(|c| c.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Leaf joints pulled back inside the surface, as leaf correction would.
    pub fn corrected_skeleton(&self) -> Result<Skeleton> {
        let mut heads = self.skeleton.positions();
        for (p, c) in self.skeleton.leaf_bones() {
            let origin = heads[p];
            let bone = heads[c] - origin;
            let len = bone.norm();
            let dir = bone / len;
            if let Some(d) = self.exit_distance(&origin, &dir, len) {
                heads[c] = origin + dir * (LEAF_LENGTH_FRACTION * d);
            }
        }
        self.skeleton.with_positions(&heads)
    }

    /// Distance along `dir` from an interior point to the surface, if the
    /// surface is reached within `max_t`.
    fn exit_distance(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
        let steps = 400;
        let dt = max_t / steps as f64;
        let mut lo = 0.0;
        for i in 1..=steps {
            let t = i as f64 * dt;
            if self.sdf(&(origin + dir * t)) >= 0.0 {
                let mut hi = t;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.sdf(&(origin + dir * mid)) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            lo = t;
        }
        None
    }

    /// Closed triangle mesh of the zero level set.
    pub fn mesh(&self, grid_step: f64) -> Result<TriMesh> {
        let h = grid_step * self.height;
        let (mut lo, mut hi) = (Point3::from([f64::INFINITY; 3]), Point3::from([f64::NEG_INFINITY; 3]));
        for c in &self.capsules {
            for p in [c.a, c.b] {
                lo = lo.inf(&(p - Vector3::repeat(c.r)));
                hi = hi.sup(&(p + Vector3::repeat(c.r)));
            }
        }
        lo -= Vector3::repeat(2.0 * h);
        let dims = ((hi - lo) / h).map(|v| v.ceil() as usize + 3);
        let (nx, ny, nz) = (dims.x, dims.y, dims.z);
        let at = |i: usize, j: usize, k: usize| lo + Vector3::new(i as f64, j as f64, k as f64) * h;
        let id = |i: usize, j: usize, k: usize| ((k * ny + j) * nx + i) as u32;
        use rayon::prelude::*;
        let field: Vec<f64> = (0..nx * ny * nz)
            .into_par_iter()
            .map(|v| {
                let (i, j, k) = (v % nx, (v / nx) % ny, v / (nx * ny));
                let f = self.sdf(&at(i, j, k));
                // Exact zeros would put vertices on grid nodes.
                if f == 0.0 {
                    1e-12 * h
                } else {
                    f
                }
            })
            .collect();
        let mut mesher = TetMesher {
            vertices: Vec::new(),
            faces: Vec::new(),
            edge_ids: HashMap::new(),
        };
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        let mut corners = [(0u32, Point3::origin(), 0.0); 4];
                        for (s, slot) in corners.iter_mut().enumerate() {
                            if s > 0 {
                                c[perm[s - 1]] += 1;
                            }
                            let vid = id(c[0], c[1], c[2]);
                            *slot = (vid, at(c[0], c[1], c[2]), field[vid as usize]);
                        }
                        mesher.tetrahedron(&corners);
                    }
                }
            }
        }
        Ok(TriMesh::new(mesher.vertices, mesher.faces)?)
    }

    /// Distance-based skinning: each vertex is bound to the owners (parent
    /// joints) of its two nearest bones.
    pub fn skin_weights(&self, vertices: &[Point3<f64>]) -> Result<SkinWeights> {
        let bones = self.skeleton.bones();
        let eps = 0.01 * self.height;
        let rows = vertices
            .iter()
            .map(|v| {
                let mut d: Vec<(f64, u32)> = bones
                    .iter()
                    .map(|&(p, c)| {
                        let seg = Capsule {
                            a: self.skeleton.joint(p).head,
                            b: self.skeleton.joint(c).head,
                            r: 0.0,
                        };
                        (seg.sdf(v), p as u32)
                    })
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut pairs: Vec<(u32, f64)> = Vec::new();
                for &(dist, j) in d.iter().take(2) {
                    let w = 1.0 / (dist + eps).powi(4);
                    match pairs.iter_mut().find(|(pj, _)| *pj == j) {
                        Some(entry) => entry.1 += w,
                        None => pairs.push((j, w)),
                    }
                }
                let total: f64 = pairs.iter().map(|(_, w)| w).sum();
                pairs.iter_mut().for_each(|(_, w)| *w /= total);
                pairs.sort_by_key(|(j, _)| *j);
                pairs
            })
            .collect();
        Ok(SkinWeights::new(rows)?)
    }

    pub fn rigged_model(&self, config: &SynthConfig) -> Result<RiggedModel> {
        let mesh = self.mesh(config.grid_step)?;
        let weights = self.skin_weights(mesh.vertices())?;
        Ok(RiggedModel {
            mesh,
            skeleton: self.skeleton.clone(),
            weights,
        })
    }

    /// Points on the union surface. Each leaf ray contributes its exit
    /// point and every capsule gets a few samples, so thin parts are never
    /// missed; the rest are spread uniformly by area.
    pub fn surface_points<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Point3<f64>> {
        const PER_CAPSULE: usize = 8;
        const MAX_TRIES: usize = 64;
        let tol = 1e-9 * self.height;
        let mut out = Vec::with_capacity(n);
        for (p, c) in self.skeleton.leaf_bones() {
            let origin = self.skeleton.joint(p).head;
            let bone = self.skeleton.joint(c).head - origin;
            let len = bone.norm();
            if let Some(d) = self.exit_distance(&origin, &(bone / len), len) {
                out.push(origin + bone / len * d);
            }
        }
        let forced = PER_CAPSULE.min(n.saturating_sub(out.len()) / self.capsules.len());
        for c in &self.capsules {
            let mut taken = 0;
            for _ in 0..MAX_TRIES {
                if taken == forced {
                    break;
                }
                let p = c.sample_surface(rng);
                if self.sdf(&p) >= -tol {
                    out.push(p);
                    taken += 1;
                }
            }
        }
        out.truncate(n);
        let areas: Vec<f64> = self.capsules.iter().map(Capsule::area).collect();
        let total: f64 = areas.iter().sum();
        while out.len() < n {
            let mut pick = rng.random_range(0.0..total);
            let ci = areas
                .iter()
                .position(|&a| {
                    pick -= a;
                    pick < 0.0
                })
                .unwrap_or(areas.len() - 1);
            let p = self.capsules[ci].sample_surface(rng);
            if self.sdf(&p) >= -tol {
                out.push(p);
            }
        }
        out
    }
}

struct TetMesher {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
    edge_ids: HashMap<(u32, u32), u32>,
}

impl TetMesher {
    fn edge_vertex(&mut self, a: &(u32, Point3<f64>, f64), b: &(u32, Point3<f64>, f64)) -> u32 {
        let key = (a.0.min(b.0), a.0.max(b.0));
        if let Some(&v) = self.edge_ids.get(&key) {
            return v;
        }
        // Interpolate from the lower id so both tets sharing the edge agree.
        let (p, q) = if a.0 < b.0 { (a, b) } else { (b, a) };
        let t = p.2 / (p.2 - q.2);
        self.vertices.push(p.1 + (q.1 - p.1) * t);
        let v = self.vertices.len() as u32 - 1;
        self.edge_ids.insert(key, v);
        v
    }

    fn emit(&mut self, tri: [u32; 3], outward: Vector3<f64>) {
        let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&outward) < 0.0 {
            self.faces.push([tri[0], tri[2], tri[1]]);
        } else {
            self.faces.push(tri);
        }
    }

    fn tetrahedron(&mut self, corners: &[(u32, Point3<f64>, f64); 4]) {
        let inside: Vec<usize> = (0..4).filter(|&i| corners[i].2 < 0.0).collect();
        let outside: Vec<usize> = (0..4).filter(|&i| corners[i].2 >= 0.0).collect();
        if inside.is_empty() || outside.is_empty() {
            return;
        }
        let centroid = |idx: &[usize]| {
            idx.iter().fold(Vector3::zeros(), |acc, &i| acc + corners[i].1.coords) / idx.len() as f64
        };
        let outward = centroid(&outside) - centroid(&inside);
        match (inside.len(), outside.len()) {
            (1, 3) | (3, 1) => {
                let (lone, others) = if inside.len() == 1 {
                    (inside[0], &outside)
                } else {
                    (outside[0], &inside)
                };
                let tri = [0, 1, 2].map(|s| self.edge_vertex(&corners[lone], &corners[others[s]]));
                self.emit(tri, outward);
            }
            _ => {
                let (a, b, c, d) = (inside[0], inside[1], outside[0], outside[1]);
                let ac = self.edge_vertex(&corners[a], &corners[c]);
                let ad = self.edge_vertex(&corners[a], &corners[d]);
                let bd = self.edge_vertex(&corners[b], &corners[d]);
                let bc = self.edge_vertex(&corners[b], &corners[c]);
                self.emit([ac, ad, bd], outward);
                self.emit([ac, bd, bc], outward);
            }
        }
    }
}

/// Raw dataset of synthetic humanoids: per-sample `mesh.ply`, `rig.json`,
/// `weights.json`, plus `manifest.json`.
pub fn write_dataset(root: &Path, counts: SplitCounts, seed: u64, config: &SynthConfig) -> Result<DatasetManifest> {
    let ids: Vec<String> = (0..counts.train + counts.val + counts.test)
        .map(|i| format!("human_{i:04}"))
        .collect();
    use rayon::prelude::*;
    ids.par_iter()
        .enumerate()
        .map(|(i, id)| {
            let body = Humanoid::generate(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), config)?;
            save_rigged_model(&root.join(id), &body.rigged_model(config)?)
        })
        .collect::<Result<Vec<()>>>()?;
    let (train, rest) = ids.split_at(counts.train);
    let (val, test) = rest.split_at(counts.val);
    let manifest = DatasetManifest {
        up_axis: UpAxis::Y,
        joints: template(),
        splits: Splits {
            train: train.to_vec(),
            val: val.to_vec(),
            test: test.to_vec(),
        },
        expected_counts: Some(counts),
    };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Conditioned samples drawn straight from the capsule surfaces, with
/// leaf-corrected joints. Cheap fixtures for training tests.
pub fn surface_samples(count: usize, points: usize, seed: u64, k_normals: usize) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let body = Humanoid::generate(seed.wrapping_add(i as u64), &SynthConfig::default())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + i as u64));
            let cloud = PointCloud::new(body.surface_points(points, &mut rng));
            let joints = body.corrected_skeleton()?.positions();
            let (cloud, joints, scale, _) = condition_cloud(&cloud, &joints, UpAxis::Y, k_normals)?;
            Ok(Sample {
                id: format!("surface_{i:03}"),
                cloud,
                joints,
                scale,
            })
        })
        .collect()
}
