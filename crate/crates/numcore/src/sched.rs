//! Reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub best_metric: Option<f64>,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub decay_rate: f64,
    pub current_lr: f64,
    pub warmup_epochs: usize,
    pub epochs_seen: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(1e-3, 8, 0.75, 0)
    }
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: usize, decay_rate: f64, warmup_epochs: usize) -> Self {
        assert!(initial_lr > 0.0, "learning rate must be positive");
        assert!(decay_rate > 0.0 && decay_rate < 1.0, "decay rate must lie in (0,1)");
        PlateauScheduler {
            best_metric: None,
            epochs_since_improvement: 0,
            patience,
            decay_rate,
            current_lr: initial_lr,
            warmup_epochs,
            epochs_seen: 0,
        }
    }

    /// Records one epoch's metric (lower is better) and returns the learning
    /// rate for the next epoch. A metric that does not strictly beat the best
    /// so far counts as a bad epoch; once bad epochs exceed `patience` the rate
    /// decays and the count restarts. Epochs inside the warmup window are not
    /// judged. Non-finite metrics count as bad epochs.
    pub fn step(&mut self, metric: f64) -> f64 {
        self.epochs_seen += 1;
        if self.epochs_seen <= self.warmup_epochs {
            return self.current_lr;
        }
        let improved = metric.is_finite() && self.best_metric.is_none_or(|b| metric < b);
        if improved {
            self.best_metric = Some(metric);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement > self.patience {
                self.current_lr *= self.decay_rate;
                self.epochs_since_improvement = 0;
            }
        }
        self.current_lr
    }
}
