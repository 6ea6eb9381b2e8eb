//! Reverse-time samplers: DDPM ancestral sampling and deterministic DDIM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::net::DenoiserParams;
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplerKind {
    /// DDPM ancestral sampling with `sigma_t^2 = beta_t`.
    Ancestral,
    /// DDIM with `eta = 0` over `steps` evenly spaced substeps.
    Ddim { steps: usize },
}

/// Evenly spaced, strictly decreasing DDIM grid from `num_steps - 1` to 0.
pub fn ddim_grid(num_steps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps < 2 || steps > num_steps {
        return param(format!(
            "DDIM needs 2..={num_steps} substeps, got {steps}"
        ));
    }
    let last = (num_steps - 1) as f64;
    let grid: Vec<usize> = (0..steps)
        .map(|i| (last * (1.0 - i as f64 / (steps - 1) as f64)).round() as usize)
        .collect();
    debug_assert!(grid.windows(2).all(|w| w[0] > w[1]));
    Ok(grid)
}

/// One ancestral step from `x_t` to `x_{t-1}`:
/// `(x_t - beta_t / sqrt(1-abar_t) * eps_theta) / sqrt(alpha_t) + sigma_t z`,
/// with `sigma_0 = 0`.
pub fn ancestral_sample_step(
    net: &DenoiserParams,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    z: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if z.len() != x_t.len() {
        return param("noise and state dimensions differ");
    }
    let eps = net.predict_eps(x_t, t)?;
    let beta = schedule.beta(t);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = if t == 0 { 0.0 } else { beta.sqrt() };
    Ok(x_t
        .iter()
        .zip(&eps)
        .zip(z)
        .map(|((x, e), zi)| inv_sqrt_alpha * (x - coef * e) + sigma * zi)
        .collect())
}

/// Deterministic DDIM step from `t` to `t_prev < t`.
pub fn ddim_sample_step(
    net: &DenoiserParams,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    t_prev: usize,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if t_prev >= t {
        return param(format!("DDIM step needs t_prev < t, got {t_prev} >= {t}"));
    }
    ddim_update(net, schedule, x_t, t, schedule.alpha_bar(t_prev))
}

/// DDIM update towards an arbitrary target signal level `alpha_bar_prev`.
/// `alpha_bar_prev = 1` returns the predicted clean sample.
pub(crate) fn ddim_update(
    net: &DenoiserParams,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    alpha_bar_prev: f64,
) -> Result<Vec<f64>> {
    let eps = net.predict_eps(x_t, t)?;
    let (a_t, s_t) = schedule.signal_noise(t);
    let a_p = alpha_bar_prev.sqrt();
    let s_p = (1.0 - alpha_bar_prev).max(0.0).sqrt();
    Ok(x_t
        .iter()
        .zip(&eps)
        .map(|(x, e)| {
            let x0 = (x - s_t * e) / a_t;
            a_p * x0 + s_p * e
        })
        .collect())
}

fn sample_one(
    net: &DenoiserParams,
    schedule: &NoiseSchedule,
    kind: SamplerKind,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let d = net.data_dim();
    let t_max = schedule.num_steps() - 1;
    let mut r = rng::keyed(seed, &[rng::domain::SAMPLE, index, u64::MAX]);
    let mut x = rng::normal_vec(&mut r, d);
    match kind {
        SamplerKind::Ancestral => {
            for t in (0..=t_max).rev() {
                let z = if t > 0 {
                    let mut r = rng::keyed(seed, &[rng::domain::SAMPLE, index, t as u64]);
                    rng::normal_vec(&mut r, d)
                } else {
                    vec![0.0; d]
                };
                x = ancestral_sample_step(net, schedule, &x, t, &z)?;
            }
        }
        SamplerKind::Ddim { steps } => {
            let grid = ddim_grid(schedule.num_steps(), steps)?;
            for w in grid.windows(2) {
                x = ddim_sample_step(net, schedule, &x, w[0], w[1])?;
            }
            x = ddim_update(net, schedule, &x, 0, 1.0)?;
        }
    }
    Ok(x)
}

/// Draws `n` samples starting from standard-normal noise at `t = T-1`.
/// Sample `i` depends only on `(seed, i)`.
pub fn sample_dataset(
    net: &DenoiserParams,
    schedule: &NoiseSchedule,
    n: usize,
    kind: SamplerKind,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return param("sample count must be >= 1");
    }
    if let SamplerKind::Ddim { steps } = kind {
        ddim_grid(schedule.num_steps(), steps)?;
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_one(net, schedule, kind, seed, i))
        .collect()
}
