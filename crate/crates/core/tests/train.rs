mod common;

use common::*;
use jointloc::rigdata::template;
use jointloc::train::{epoch_rng, fit, log_csv, parse_log_csv, LogRow, TrainConfig, Trainer, LAST_CHECKPOINT, LOG_FILE};
use rand::Rng;

#[test]
fn constant_metric_decays_every_nine_flat_epochs() {
    let config = TrainConfig::new("unused", "unused");
    let mut trainer = Trainer::new(config, template()).unwrap();
    let trace: Vec<f64> = (0..30).map(|_| trainer.scheduler.step(5.0)).collect();
    for (i, lr) in trace.iter().enumerate() {
        let decays = i / 9;
        let want = 1e-3 * 0.75f64.powi(decays as i32);
        assert!((lr - want).abs() < 1e-15, "call {}: {lr} vs {want}", i + 1);
    }
    assert_eq!(trace[8], 1e-3);
    assert!((trace[9] - 7.5e-4).abs() < 1e-15);
}

#[test]
fn improving_metric_never_decays() {
    let mut trainer = Trainer::new(TrainConfig::new("a", "b"), template()).unwrap();
    for i in 0..40 {
        assert_eq!(trainer.scheduler.step(100.0 - i as f64), 1e-3);
    }
}

#[test]
fn epoch_generators_are_seeded_and_distinct() {
    let draw = |seed, epoch| epoch_rng(seed, epoch).random::<u64>();
    assert_eq!(draw(3, 1), draw(3, 1));
    assert_ne!(draw(3, 1), draw(3, 2));
    assert_ne!(draw(3, 1), draw(4, 1));
}

#[test]
fn log_round_trips_through_csv() {
    let rows = vec![
        LogRow {
            epoch: 1,
            train_loss: 0.123456789,
            val_mpjpe: Some(4.5),
            lr: 1e-3,
            seconds: 1.5,
        },
        LogRow {
            epoch: 2,
            train_loss: 0.1,
            val_mpjpe: None,
            lr: 7.5e-4,
            seconds: 1.25,
        },
    ];
    let text = log_csv("jointloc test", &rows);
    assert_eq!(parse_log_csv(&text).unwrap(), rows);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let straight = tiny_train_config(&data, &dir.path().join("straight"), 3);
    let outcome = fit(&straight, false).unwrap();
    assert_eq!(outcome.log.len(), 3);

    let split = tiny_train_config(&data, &dir.path().join("split"), 2);
    fit(&split, false).unwrap();
    let resumed = fit(&TrainConfig { epochs: 3, ..split.clone() }, true).unwrap();
    assert_eq!(resumed.log.len(), 3);

    let a = std::fs::read(straight.output_dir.join(LAST_CHECKPOINT)).unwrap();
    let b = std::fs::read(split.output_dir.join(LAST_CHECKPOINT)).unwrap();
    assert!(a == b, "resumed checkpoint differs");
    let log = std::fs::read_to_string(split.output_dir.join(LOG_FILE)).unwrap();
    assert_eq!(parse_log_csv(&log).unwrap().len(), 3);

    let other = TrainConfig {
        seed: 99,
        epochs: 4,
        ..split
    };
    assert!(fit(&other, true).is_err());
}

#[test]
fn loss_falls_on_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 6);
    let mut config = tiny_train_config(&data, &dir.path().join("run"), 4);
    config.augmentation = false;
    let outcome = fit(&config, false).unwrap();
    let first = outcome.log.first().unwrap().train_loss;
    let last = outcome.log.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert!(outcome.best_checkpoint.exists());
}

#[test]
fn validation_leaves_the_model_untouched() {
    use jointloc::model::{JointLocalizer, ModelConfig};
    use jointloc::rigdata::{Category, Sample};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let config = ModelConfig {
        k_neighbors: 5,
        joint_count: 3,
        ..ModelConfig::default()
    };
    let mut model = JointLocalizer::new(config, 2).unwrap();
    let cloud = random_cloud(40, true, &mut rng);
    let target = random_joints(3, &mut rng);
    model.loss_and_gradients(&cloud, &target).unwrap();
    let before = model.clone();
    let samples = vec![Sample {
        id: "s".into(),
        cloud,
        joints: target,
        scale: geometry::ScaleRecord::identity(),
    }];
    jointloc::train::validate(&model, &samples, &[Category::Head; 3]).unwrap();
    assert_eq!(model, before);
}

/// Reduce-on-plateau written out from its definition.
fn simulated_plateau(metrics: &[f64], lr0: f64, patience: usize, decay: f64) -> Vec<f64> {
    let mut best = f64::INFINITY;
    let mut bad = 0;
    let mut lr = lr0;
    metrics
        .iter()
        .map(|&m| {
            if m < best {
                best = m;
                bad = 0;
            } else {
                bad += 1;
                if bad > patience {
                    lr *= decay;
                    bad = 0;
                }
            }
            lr
        })
        .collect()
}

proptest::proptest! {
    #[test]
    fn scheduler_matches_simulated_plateau(metrics in proptest::collection::vec(0u8..6, 1..80)) {
        let metrics: Vec<f64> = metrics.into_iter().map(f64::from).collect();
        let mut trainer = Trainer::new(TrainConfig::new("a", "b"), template()).unwrap();
        let got: Vec<f64> = metrics.iter().map(|&m| trainer.scheduler.step(m)).collect();
        let want = simulated_plateau(&metrics, 1e-3, 8, 0.75);
        for (g, w) in got.iter().zip(&want) {
            proptest::prop_assert!((g - w).abs() <= 1e-18);
        }
        proptest::prop_assert!(got.windows(2).all(|w| w[1] <= w[0]));
    }
}
