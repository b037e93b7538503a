//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        AdamW {
            config,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Restores a saved state; moment buffers must line up with `params`.
    pub fn from_state(
        config: AdamWConfig,
        step: u64,
        first_moment: Vec<Vec<f64>>,
        second_moment: Vec<Vec<f64>>,
        params: &[Tensor],
    ) -> Result<Self> {
        let opt = AdamW {
            config,
            step,
            first_moment,
            second_moment,
        };
        opt.check_shapes(params.iter().map(Tensor::len))?;
        Ok(opt)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    fn check_shapes(&self, lens: impl ExactSizeIterator<Item = usize>) -> Result<()> {
        if lens.len() != self.first_moment.len() || self.second_moment.len() != self.first_moment.len() {
            return Err(NumError::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.first_moment.len(),
                lens.len()
            )));
        }
        for (i, len) in lens.enumerate() {
            if self.first_moment[i].len() != len || self.second_moment[i].len() != len {
                return Err(NumError::Contract(format!(
                    "moment buffers of parameter {i} do not match its {len} entries"
                )));
            }
        }
        Ok(())
    }

    /// One update: `p ← p − lr·wd·p`, then the bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        self.check_shapes(params.iter().map(Tensor::len))?;
        if grads.len() != params.len() {
            return Err(NumError::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(NumError::Contract(format!(
                    "gradient {i} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *pv -= lr * weight_decay * *pv;
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(vec![1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor::zeros(vec![3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the move is lr·g/(|g| + ε).
        let mut p = param(0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &param(1.0)).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn decoupled_decay_scales_parameter() {
        let mut p = param(2.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.step(&mut p, &param(0.0)).unwrap();
        assert_eq!(p[0].data()[0], 2.0 - 1e-3 * 1e-4 * 2.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = param(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let bad = vec![Tensor::zeros(vec![2])];
        assert!(matches!(opt.step(&mut p, &bad), Err(NumError::Contract(_))));
        assert_eq!(opt.step_count(), 0);
    }
}
