use geometry::Bvh;
use jointloc::rigdata::{baseline_bone_hits, correct_leaf_bones, joints_outside, template, TEMPLATE_JOINT_COUNT};
use jointloc::synth::{surface_samples, Humanoid, SynthConfig};
use nalgebra::Point3;

/// Every directed edge is matched by exactly one opposite edge.
fn assert_closed_and_oriented(mesh: &geometry::TriMesh) {
    let mut edges = std::collections::HashMap::new();
    for f in mesh.faces() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *edges.entry((a, b)).or_insert(0usize) += 1;
        }
    }
    for (&(a, b), &n) in &edges {
        assert_eq!(n, 1, "edge {a}-{b} repeated");
        assert_eq!(edges.get(&(b, a)), Some(&1), "edge {a}-{b} is open");
    }
}

#[test]
fn coarse_mesh_is_closed_and_rig_fits_after_leaf_correction() {
    let cfg = SynthConfig::coarse();
    let body = Humanoid::generate(7, &cfg).unwrap();
    let model = body.rigged_model(&cfg).unwrap();
    assert_eq!(model.skeleton.len(), TEMPLATE_JOINT_COUNT);
    assert_closed_and_oriented(&model.mesh);
    let bvh = Bvh::build(&model.mesh).unwrap();
    let outside = joints_outside(&bvh, &model.skeleton);
    assert!(!outside.is_empty(), "raw tips should poke out");
    let fixed = correct_leaf_bones(&bvh, &model.skeleton).unwrap();
    let still_outside = joints_outside(&bvh, &fixed.skeleton);
    assert!(still_outside.is_empty(), "{still_outside:?}");
    assert!(baseline_bone_hits(&bvh, &fixed.skeleton).iter().all(|&h| h % 2 == 1));
}

#[test]
fn generation_is_seeded() {
    let cfg = SynthConfig::coarse();
    let a = Humanoid::generate(3, &cfg).unwrap().mesh(cfg.grid_step).unwrap();
    let b = Humanoid::generate(3, &cfg).unwrap().mesh(cfg.grid_step).unwrap();
    let c = Humanoid::generate(4, &cfg).unwrap().mesh(cfg.grid_step).unwrap();
    assert_closed_and_oriented(&c);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn mesh_vertices_lie_on_the_field_zero_set() {
    let cfg = SynthConfig::coarse();
    let body = Humanoid::generate(11, &cfg).unwrap();
    let mesh = body.mesh(cfg.grid_step).unwrap();
    let h = cfg.grid_step * body.height();
    for v in mesh.vertices() {
        assert!(body.sdf(v).abs() < h, "{}", body.sdf(v));
    }
}

#[test]
fn surface_points_sit_on_the_surface() {
    use rand::SeedableRng;
    let body = Humanoid::generate(5, &SynthConfig::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Point3<f64>> = body.surface_points(500, &mut rng);
    assert_eq!(pts.len(), 500);
    for p in &pts {
        assert!(body.sdf(p).abs() < 1e-9 * body.height());
    }
}

#[test]
fn surface_samples_have_joints_inside_the_cloud_bounds() {
    let samples = surface_samples(2, 1024, 9, 30).unwrap();
    for s in &samples {
        assert_eq!(s.joints.len(), template().len());
        assert!(s.joints_within_bounds());
        assert!(s.cloud.normals.is_some());
    }
}
