mod common;

use common::*;
use jointloc::model::{combine, loss, Checkpoint, HullCertificate, JointLocalizer, ModelConfig};
use jointloc::rigdata::template;
use numcore::Mode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_finite_differences() {
    for use_normals in [true, false] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = JointLocalizer::new(tiny_config(use_normals), 3).unwrap();
        let cloud = random_cloud(32, use_normals, &mut rng);
        let target = random_joints(3, &mut rng);
        let report = gradcheck(&model, &cloud, &target, 1);
        assert_eq!(report.entries, model.parameter_count());
        assert!(report.worst < REL_TOL, "normals={use_normals}: {}", report.worst_at);
    }
}

#[test]
fn default_width_gradients_match_on_a_sample_of_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = ModelConfig {
        k_neighbors: 6,
        joint_count: 4,
        ..ModelConfig::default()
    };
    let model = JointLocalizer::new(config, 1).unwrap();
    let cloud = random_cloud(24, true, &mut rng);
    let target = random_joints(4, &mut rng);
    let report = gradcheck(&model, &cloud, &target, 997);
    assert!(report.entries > 300);
    assert!(report.worst < REL_TOL, "{}", report.worst_at);
}

#[test]
fn recipe_network_has_expected_widths_and_size() {
    let config = ModelConfig::default();
    assert_eq!(config.parameter_count(), 390_469);
    assert!((config.parameter_count() as f64 / 390_000.0 - 1.0).abs() < 0.05);
    let model = JointLocalizer::new(config.clone(), 0).unwrap();
    assert_eq!(model.parameter_count(), config.parameter_count());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cloud = random_cloud(300, true, &mut rng);
    let p = model.predict(&cloud).unwrap();
    assert_eq!(
        p.stage_shapes,
        [(300, 64), (300, 64), (300, 128), (300, 256), (300, 512), (300, 512), (300, 69)]
    );
    assert_eq!((p.coefficients.rows(), p.coefficients.cols()), (300, 69));
    assert_eq!(p.joints.len(), 69);
}

#[test]
fn hundred_point_cloud_has_recipe_shapes() {
    let model = JointLocalizer::new(ModelConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = model.predict(&random_cloud(100, true, &mut rng)).unwrap();
    let widths: Vec<usize> = p.stage_shapes.iter().map(|s| s.1).collect();
    assert_eq!(widths, [64, 64, 128, 256, 512, 512, 69]);
    assert!(p.stage_shapes.iter().all(|s| s.0 == 100));
}

#[test]
fn xyz_only_model_has_three_input_channels() {
    let config = ModelConfig {
        use_normals: false,
        ..ModelConfig::default()
    };
    assert_eq!(config.layer_widths()[0], (3, 64));
    assert_eq!(ModelConfig::default().parameter_count() - config.parameter_count(), 2 * 3 * 64);
}

#[test]
fn too_few_points_is_rejected_with_guidance() {
    let model = JointLocalizer::new(tiny_config(true), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = model.predict(&random_cloud(4, true, &mut rng)).unwrap_err();
    assert!(err.to_string().contains("k = 4"), "{err}");
    assert!(model.predict(&random_cloud(5, true, &mut rng)).is_ok());
}

#[test]
fn missing_normals_are_a_contract_error() {
    let model = JointLocalizer::new(tiny_config(true), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(model.predict(&random_cloud(20, false, &mut rng)).is_err());
}

#[test]
fn eval_loss_is_sum_of_squared_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = JointLocalizer::new(tiny_config(true), 9).unwrap();
    let cloud = random_cloud(40, true, &mut rng);
    let target = random_joints(3, &mut rng);
    let pred = model.predict(&cloud).unwrap();
    let oracle: f64 = pred
        .joints
        .iter()
        .zip(&target)
        .map(|(p, g)| (p.x - g.x).powi(2) + (p.y - g.y).powi(2) + (p.z - g.z).powi(2))
        .sum();
    let on_tape = model.loss(&cloud, &target, Mode::Eval).unwrap();
    assert!((on_tape - oracle).abs() <= 1e-12 * oracle.max(1.0));
    assert!((loss(&pred.joints, &target).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = ModelConfig {
        k_neighbors: 5,
        ..ModelConfig::default()
    };
    let mut model = JointLocalizer::new(config, 8).unwrap();
    let cloud = random_cloud(60, true, &mut rng);
    let target = random_joints(69, &mut rng);
    model.loss_and_gradients(&cloud, &target).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(model.clone(), template(), 8).unwrap().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.model, model);
    let a = model.predict(&cloud).unwrap().joints;
    let b = back.model.predict(&cloud).unwrap().joints;
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictions_lie_in_the_convex_hull(seed in any::<u64>(), n in 12usize..60, normals in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = JointLocalizer::new(tiny_config(normals), seed).unwrap();
        let cloud = random_cloud(n, normals, &mut rng);
        let p = model.predict(&cloud).unwrap();
        let cert = HullCertificate::check(&p, &cloud.points).unwrap();
        prop_assert!(cert.holds(1e-6, 1e-9), "{cert:?}");
        let recombined = combine(&p.coefficients, &cloud.points).unwrap();
        prop_assert!(max_gap(&recombined, &p.joints) < 1e-9);
    }

    #[test]
    fn row_order_does_not_change_joints(seed in any::<u64>(), n in 12usize..60, normals in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = JointLocalizer::new(tiny_config(normals), seed ^ 1).unwrap();
        let cloud = random_cloud(n, normals, &mut rng);
        let (perm, order) = shuffled(&cloud, &mut rng);
        let a = model.predict(&cloud).unwrap();
        let b = model.predict(&perm).unwrap();
        prop_assert!(max_gap(&a.joints, &b.joints) < 1e-9);
        for (new_row, &old_row) in order.iter().enumerate() {
            for (x, y) in a.coefficients.row(old_row).iter().zip(b.coefficients.row(new_row)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_mode_keeps_the_hull_property(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = JointLocalizer::new(tiny_config(true), seed).unwrap();
        let cloud = random_cloud(30, true, &mut rng);
        let mut tape = numcore::Tape::new();
        let vars = model.record(&mut tape, &cloud, Mode::Train).unwrap();
        let a = tape.value(vars.coefficients);
        for j in 0..a.cols() {
            let col: f64 = (0..a.rows()).map(|i| a.row(i)[j]).sum();
            prop_assert!((col - 1.0).abs() < 1e-6);
        }
        prop_assert!(a.data().iter().all(|&v| v >= 0.0));
    }
}
