//! DDPM training with the unweighted objective: uniform `t`, standard-normal
//! noise, mean of `L_t` over the batch.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::net::{ArchConfig, DenoiserParams};
use crate::optim::{adamw_step, AdamWHyper, AdamWState, TrainConfig};
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Per-epoch loss history as `epoch,mean_loss,lr` CSV.
pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,mean_loss,lr\n");
    for h in history {
        s.push_str(&format!("{},{:.17e},{:.17e}\n", h.epoch, h.mean_loss, h.lr));
    }
    s
}

/// Examples per parallel gradient task.
const GRAD_CHUNK: usize = 16;

pub fn train_ddpm(
    data: &[Vec<f64>],
    schedule: &NoiseSchedule,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<(DenoiserParams, Vec<EpochLoss>)> {
    if data.is_empty() {
        return param("training data is empty");
    }
    cfg.validate()?;
    if arch.num_steps != schedule.num_steps() {
        return param(format!(
            "architecture embeds {} steps but schedule has {}",
            arch.num_steps,
            schedule.num_steps()
        ));
    }
    if let Some(bad) = data.iter().position(|x| x.len() != arch.data_dim) {
        return param(format!("sample {bad} has wrong dimension"));
    }
    let mut params = DenoiserParams::init(arch, cfg.seed)?;
    let n_params = params.param_count();
    let mut state = AdamWState::new(n_params, AdamWHyper::new(cfg.lr, cfg.weight_decay));
    let n_steps = schedule.num_steps();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        state.hyper.lr = lr;
        let mut shuffle = rng::keyed(cfg.seed, &[rng::domain::TRAIN, epoch as u64, u64::MAX]);
        order.shuffle(&mut shuffle);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let net = &params;
            let scale = 1.0 / batch.len() as f64;
            // fixed-size chunks keep the summation order independent of the thread count
            let partials: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut acc = vec![0.0; n_params];
                    let mut loss = 0.0;
                    for &i in chunk {
                        let mut r = rng::keyed(cfg.seed, &[rng::domain::TRAIN, epoch as u64, i as u64]);
                        let t = r.random_range(0..n_steps);
                        let eps = rng::normal_vec(&mut r, arch.data_dim);
                        loss += net.accumulate_grad_theta(&data[i], t, &eps, schedule, scale, &mut acc)?;
                    }
                    Ok((loss, acc))
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for res in partials {
                let (loss, g) = res.map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged { epoch },
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum += loss;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            adamw_step(params.flat_mut(), &grad, &mut state)?;
        }
        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() || params.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochLoss { epoch, mean_loss, lr });
    }
    Ok((params, history))
}
