//! Discrete noise schedules and the forward (noising) process.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Serialized form of a schedule. The tables are always re-derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

impl Default for ScheduleConfig {
    /// Desk-scale default: T=100 with the canonical (1e-4, 0.02, T=1000)
    /// betas scaled by 1000/T.
    fn default() -> Self {
        Self {
            num_steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            kind: ScheduleKind::Linear,
        }
    }
}

/// `betas`, `alphas = 1 - betas` and the running products `alpha_bars`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleConfig", into = "ScheduleConfig")]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end`, both endpoints included.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps < 2 {
            return param(format!("schedule needs at least 2 steps, got {num_steps}"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return param(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            ));
        }
        let denom = (num_steps - 1) as f64;
        let betas: Vec<f64> = (0..num_steps)
            .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / denom))
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            config: ScheduleConfig {
                num_steps,
                beta_start,
                beta_end,
                kind: ScheduleKind::Linear,
            },
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        match cfg.kind {
            ScheduleKind::Linear => Self::linear(cfg.num_steps, cfg.beta_start, cfg.beta_end),
        }
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t < self.num_steps() {
            Ok(())
        } else {
            Err(Error::Index {
                index: t,
                len: self.num_steps(),
            })
        }
    }

    /// Short digest of the schedule configuration.
    pub fn digest(&self) -> String {
        crate::digest::digest_json(&self.config)
    }

    /// `sqrt(abar_t) * x + sqrt(1 - abar_t) * eps`
    pub fn forward_diffuse(&self, x: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        if x.len() != eps.len() {
            return param(format!(
                "noise length {} does not match data length {}",
                eps.len(),
                x.len()
            ));
        }
        let (a, s) = self.signal_noise(t);
        Ok(x.iter().zip(eps).map(|(xi, ei)| a * xi + s * ei).collect())
    }

    /// `(sqrt(abar_t), sqrt(1 - abar_t))`
    #[inline]
    pub fn signal_noise(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bars[t];
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

impl TryFrom<ScheduleConfig> for NoiseSchedule {
    type Error = Error;
    fn try_from(cfg: ScheduleConfig) -> Result<Self> {
        Self::from_config(&cfg)
    }
}

impl From<NoiseSchedule> for ScheduleConfig {
    fn from(s: NoiseSchedule) -> Self {
        s.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn two_step_hand_values() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert!((s.alphas()[0] - 0.9).abs() < 1e-15);
        assert!((s.alphas()[1] - 0.8).abs() < 1e-15);
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn constant_schedule() {
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.1]);
    }

    #[test]
    fn terminal_alpha_bar_matches_log_product() {
        let s = NoiseSchedule::linear(100, 1e-3, 0.2).unwrap();
        // independent oracle: sum of log(1 - beta) with betas built from scratch
        let log_sum: f64 = (0..100)
            .map(|i| (1.0 - (1e-3 + (0.2 - 1e-3) * i as f64 / 99.0)).ln())
            .sum();
        let exact = log_sum.exp();
        let last = s.alpha_bar(99);
        assert!(((last - exact) / exact).abs() < 1e-10);
        assert!(last > 4e-5 / 2.0 && last < 4e-5 * 2.0, "{last}");
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn alpha_bars_strictly_decreasing() {
        let s = NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.alpha_bar(0), s.alpha(0));
        for w in s.alpha_bars().windows(2) {
            assert!(w[1] < w[0]);
        }
        let last = *s.alpha_bars().last().unwrap();
        assert!(last > 0.0 && last < s.alpha_bar(0) && s.alpha_bar(0) < 1.0);
    }

    #[test]
    fn forward_special_cases() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let out = s.forward_diffuse(&[2.0, -1.0], 1, &[0.0, 0.0]).unwrap();
        let a = 0.72f64.sqrt();
        assert!((out[0] - a * 2.0).abs() < 1e-15 && (out[1] + a).abs() < 1e-15);

        let out = s.forward_diffuse(&[0.0, 0.0], 0, &[1.0, 0.0]).unwrap();
        assert_eq!(out, vec![(1.0f64 - 0.9).sqrt(), 0.0]);

        assert!(matches!(
            s.forward_diffuse(&[0.0], 2, &[0.0]),
            Err(Error::Index { index: 2, len: 2 })
        ));
        assert!(s.forward_diffuse(&[0.0], 0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn quarter_alpha_bar_scales_by_half() {
        // beta = 0.75 at a single step gives abar = 0.25
        let s = NoiseSchedule::linear(2, 0.75, 0.75).unwrap();
        let out = s.forward_diffuse(&[2.0, 0.0], 0, &[0.0, 0.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1] == 0.0);
    }

    #[test]
    fn json_round_trip() {
        let s = NoiseSchedule::linear(100, 1e-3, 0.2).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"num_steps\":100"));
        let back: NoiseSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn forward_marginals_small() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let x = [1.5, -0.5];
        let t = 4;
        let mut r = rng::keyed(3, &[rng::domain::CONTROL]);
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| s.forward_diffuse(&x, t, &rng::normal_vec(&mut r, 2)).unwrap())
            .collect();
        let ab = s.alpha_bar(t);
        for d in 0..2 {
            let m = draws.iter().map(|v| v[d]).sum::<f64>() / n as f64;
            let se = ((1.0 - ab) / n as f64).sqrt();
            assert!((m - ab.sqrt() * x[d]).abs() < 4.0 * se);
        }
    }
}
