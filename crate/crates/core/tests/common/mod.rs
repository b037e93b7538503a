#![allow(dead_code)]

use geometry::PointCloud;
use jointloc::model::{JointLocalizer, ModelConfig};
use nalgebra::{Point3, Vector3};
use numcore::Mode;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// N=32-scale network: k = 4, three joints, narrow layers.
pub fn tiny_config(use_normals: bool) -> ModelConfig {
    ModelConfig {
        k_neighbors: 4,
        edge_widths: vec![6, 6, 8, 10],
        mlp_width: 12,
        joint_count: 3,
        use_normals,
        ..ModelConfig::default()
    }
}

pub fn random_cloud(n: usize, normals: bool, rng: &mut ChaCha8Rng) -> PointCloud {
    let points: Vec<Point3<f64>> = (0..n)
        .map(|_| Point3::new(rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0), rng.random_range(-0.2..0.2)))
        .collect();
    if !normals {
        return PointCloud::new(points);
    }
    let normals = (0..n)
        .map(|_| {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            v.normalize()
        })
        .collect();
    PointCloud::with_normals(points, normals).unwrap()
}

pub fn random_joints(j: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
    (0..j)
        .map(|_| Point3::new(rng.random_range(-0.3..0.3), rng.random_range(0.1..0.9), rng.random_range(-0.1..0.1)))
        .collect()
}

pub struct GradReport {
    pub worst: f64,
    pub worst_at: String,
    pub entries: usize,
}

/// Compares the training-mode loss gradient with central differences.
/// `stride` > 1 checks every `stride`-th entry of each tensor.
pub fn gradcheck(model: &JointLocalizer, cloud: &PointCloud, target: &[Point3<f64>], stride: usize) -> GradReport {
    let (_, grads) = model.clone().loss_and_gradients(cloud, target).unwrap();
    let names = model.parameter_names();
    let mut report = GradReport {
        worst: 0.0,
        worst_at: String::new(),
        entries: 0,
    };
    for (p, grad) in grads.iter().enumerate() {
        for e in (0..grad.len()).step_by(stride.max(1)) {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.parameters_mut()[p].data_mut()[e] += delta;
                m.loss(cloud, target, Mode::Train).unwrap()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let err = rel_err(grad.data()[e], numeric);
            report.entries += 1;
            if err > report.worst {
                report.worst = err;
                report.worst_at = format!("{}[{e}]: analytic {} numeric {numeric}", names[p], grad.data()[e]);
            }
        }
    }
    report
}

pub fn shuffled(cloud: &PointCloud, rng: &mut ChaCha8Rng) -> (PointCloud, Vec<usize>) {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(rng);
    let points = order.iter().map(|&i| cloud.points[i]).collect();
    let out = match &cloud.normals {
        Some(n) => PointCloud::with_normals(points, order.iter().map(|&i| n[i]).collect()).unwrap(),
        None => PointCloud::new(points),
    };
    (out, order)
}

pub fn max_gap(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs().max()).fold(0.0, f64::max)
}

/// Closed UV sphere.
pub fn uv_sphere(center: Point3<f64>, radius: f64, rings: usize, segments: usize) -> geometry::TriMesh {
    use std::f64::consts::{PI, TAU};
    let mut v = vec![center + Vector3::new(0.0, radius, 0.0)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            v.push(center + radius * Vector3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()));
        }
    }
    v.push(center - Vector3::new(0.0, radius, 0.0));
    let south = (v.len() - 1) as u32;
    let at = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    let mut f = Vec::new();
    for s in 0..segments {
        f.push([0, at(1, s + 1), at(1, s)]);
        f.push([south, at(rings - 1, s), at(rings - 1, s + 1)]);
        for r in 1..rings - 1 {
            f.push([at(r, s), at(r, s + 1), at(r + 1, s + 1)]);
            f.push([at(r, s), at(r + 1, s + 1), at(r + 1, s)]);
        }
    }
    geometry::TriMesh::new(v, f).unwrap()
}

/// Closed cylinder along +y from `y0` to `y1`.
pub fn cylinder(radius: f64, y0: f64, y1: f64, segments: usize) -> geometry::TriMesh {
    use std::f64::consts::TAU;
    let mut v = Vec::new();
    for y in [y0, y1] {
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            v.push(Point3::new(radius * phi.cos(), y, radius * phi.sin()));
        }
    }
    v.push(Point3::new(0.0, y0, 0.0));
    v.push(Point3::new(0.0, y1, 0.0));
    let (bottom, top) = ((2 * segments) as u32, (2 * segments + 1) as u32);
    let lo = |s: usize| (s % segments) as u32;
    let hi = |s: usize| (segments + s % segments) as u32;
    let mut f = Vec::new();
    for s in 0..segments {
        f.push([lo(s), hi(s), hi(s + 1)]);
        f.push([lo(s), hi(s + 1), lo(s + 1)]);
        f.push([bottom, lo(s), lo(s + 1)]);
        f.push([top, hi(s + 1), hi(s)]);
    }
    geometry::TriMesh::new(v, f).unwrap()
}

/// Chain skeleton through `heads`, each joint the parent of the next.
pub fn chain(heads: &[Point3<f64>]) -> jointloc::rigdata::Skeleton {
    use jointloc::rigdata::{Category, Joint, Skeleton};
    let n = heads.len();
    let joints = (0..n)
        .map(|i| Joint {
            name: format!("j{i}"),
            parent: i.checked_sub(1),
            head: heads[i],
            tail: if i + 1 < n { heads[i + 1] } else { heads[i] },
            category: Category::Spine,
            leaf: i + 1 == n,
        })
        .collect();
    Skeleton::new(joints).unwrap()
}

/// Raw and conditioned four-humanoid dataset (2 train, 1 val, 1 test).
pub fn tiny_dataset(root: &std::path::Path, seed: u64) -> std::path::PathBuf {
    use jointloc::pipeline::{preprocess, PreprocessOptions};
    use jointloc::rigdata::files::SplitCounts;
    use jointloc::synth::{write_dataset, SynthConfig};
    let raw = root.join("raw");
    let cond = root.join("cond");
    let config = SynthConfig {
        grid_step: 0.045,
        ..SynthConfig::default()
    };
    let counts = SplitCounts {
        train: 2,
        val: 1,
        test: 1,
    };
    write_dataset(&raw, counts, seed, &config).unwrap();
    let options = PreprocessOptions {
        seed,
        ..PreprocessOptions::default()
    };
    preprocess(&raw, &cond, &options).unwrap();
    cond
}

pub fn tiny_train_config(dataset: &std::path::Path, out: &std::path::Path, epochs: usize) -> jointloc::train::TrainConfig {
    let mut c = jointloc::train::TrainConfig::new(dataset, out);
    c.epochs = epochs;
    c.k_neighbors = 8;
    c
}
