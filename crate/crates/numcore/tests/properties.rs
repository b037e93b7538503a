use numcore::{AdamW, AdamWConfig, PlateauScheduler, Tape, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_columns_are_distributions(
        n in 1usize..40,
        j in 1usize..6,
        seed in any::<u64>(),
        scale in 0.0f64..500.0,
    ) {
        let data: Vec<f64> = (0..n * j)
            .map(|i| ((i as f64 + 1.0) * (seed % 9973) as f64 * 1e-3).sin() * scale)
            .collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![n, j], data).unwrap());
        let y = tape.softmax_over_points(x).unwrap();
        let v = tape.value(y);
        for c in 0..j {
            let mut s = 0.0;
            for i in 0..n {
                prop_assert!(v.at(i, c) >= 0.0);
                s += v.at(i, c);
            }
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adamw_without_gradient_or_decay_is_identity(
        values in proptest::collection::vec(-10.0f64..10.0, 1..20),
        lr in 1e-6f64..1.0,
        steps in 1usize..5,
    ) {
        let mut p = vec![Tensor::new(vec![values.len()], values.clone()).unwrap()];
        let cfg = AdamWConfig { learning_rate: lr, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &p);
        for _ in 0..steps {
            opt.step(&mut p, &[Tensor::zeros(vec![values.len()])]).unwrap();
        }
        prop_assert_eq!(p[0].data(), &values[..]);
    }

    #[test]
    fn plateau_never_raises_learning_rate(
        metrics in proptest::collection::vec(0.0f64..10.0, 1..80),
        patience in 0usize..10,
    ) {
        let mut s = PlateauScheduler::new(1e-3, patience, 0.75, 0);
        let mut last = s.current_lr;
        for m in metrics {
            let lr = s.step(m);
            prop_assert!(lr <= last && lr > 0.0);
            prop_assert!(s.epochs_since_improvement <= s.patience);
            last = lr;
        }
    }
}
