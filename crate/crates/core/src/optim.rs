//! AdamW with decoupled weight decay, and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    pub fn new(n: usize, hyper: AdamWHyper) -> Self {
        Self {
            step_count: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            hyper,
        }
    }
}

/// One AdamW update in place. The decay term uses the pre-update parameters
/// and is never folded into the gradient.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return param(format!(
            "length mismatch: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.step_count += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step_count as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step_count as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        let v = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * params[i]);
    }
    Ok(())
}

/// `lr0 * gamma^floor(epoch / step_epochs)`
pub fn step_lr(lr0: f64, epoch: usize, step_epochs: usize, gamma: f64) -> f64 {
    lr0 * gamma.powi((epoch / step_epochs.max(1)) as i32)
}

/// Training recipe shared by the DDPM trainer and the linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub sched_step_epochs: usize,
    pub sched_gamma: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Linear-classifier recipe: batch 50, 100 epochs, AdamW lr 1e-3 with
    /// weight decay 10, StepLR every 5 epochs by 0.8.
    pub fn classifier() -> Self {
        Self {
            epochs: 100,
            batch_size: 50,
            lr: 1e-3,
            weight_decay: 10.0,
            sched_step_epochs: 5,
            sched_gamma: 0.8,
            seed: 0,
        }
    }

    /// Desk-scale DDPM recipe.
    pub fn ddpm() -> Self {
        Self {
            epochs: 400,
            batch_size: 64,
            lr: 2e-4,
            weight_decay: 0.0,
            sched_step_epochs: 1000,
            sched_gamma: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.sched_step_epochs == 0 {
            return param("epochs, batch_size and sched_step_epochs must be positive");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return param("lr must be positive and weight_decay non-negative");
        }
        if !(self.sched_gamma > 0.0 && self.sched_gamma <= 1.0) {
            return param(format!("sched_gamma must be in (0, 1], got {}", self.sched_gamma));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.lr, epoch, self.sched_step_epochs, self.sched_gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut st = AdamWState::new(3, AdamWHyper::new(0.1, 0.0));
        for _ in 0..5 {
            adamw_step(&mut p, &[0.0; 3], &mut st).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn pure_decay() {
        let mut p = vec![2.0, -4.0];
        let mut st = AdamWState::new(2, AdamWHyper::new(0.01, 10.0));
        adamw_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![2.0 * (1.0 - 0.01 * 10.0), -4.0 * (1.0 - 0.01 * 10.0)]);
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = vec![1.0];
        let mut st = AdamWState::new(1, AdamWHyper::new(0.1, 0.0));
        adamw_step(&mut p, &[1.0], &mut st).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        assert_eq!(p[0], 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)));
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn mismatched_lengths() {
        let mut p = vec![1.0];
        let mut st = AdamWState::new(1, AdamWHyper::new(0.1, 0.0));
        assert!(adamw_step(&mut p, &[1.0, 2.0], &mut st).is_err());
    }

    #[test]
    fn step_lr_values() {
        assert_eq!(step_lr(1e-3, 0, 5, 0.8), 1e-3);
        assert_eq!(step_lr(1e-3, 4, 5, 0.8), 1e-3);
        assert!((step_lr(1e-3, 5, 5, 0.8) - 8e-4).abs() < 1e-18);
        assert!((step_lr(1e-3, 99, 5, 0.8) - 1e-3 * 0.8f64.powi(19)).abs() < 1e-18);
    }

    #[test]
    fn classifier_recipe_values() {
        let c = TrainConfig::classifier();
        assert_eq!((c.batch_size, c.epochs), (50, 100));
        assert_eq!((c.lr, c.weight_decay), (1e-3, 10.0));
        assert_eq!((c.sched_step_epochs, c.sched_gamma), (5, 0.8));
        c.validate().unwrap();
        assert!(TrainConfig { sched_gamma: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { sched_gamma: 1.5, ..c }.validate().is_err());
    }
}
