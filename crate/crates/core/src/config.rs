//! Experiment configuration, stored as JSON. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{CalibrationObjective, Task};
use crate::data::{MixtureSpec, SplitCounts};
use crate::error::{param, Error, Result};
use crate::features::{FeatureSpec, TimestepPlan};
use crate::net::ArchConfig;
use crate::optim::TrainConfig;
use crate::schedule::ScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub sample: u64,
    pub feature: u64,
    pub control: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let s = |k: u64| crate::rng::mix_key(seed, &[k]);
        Self {
            data: s(1),
            sample: s(3),
            feature: s(4),
            control: s(6),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

/// The independently trained second generator used for model attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForeignConfig {
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
    pub ddim_steps: usize,
}

impl Default for ForeignConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![48, 48],
            seed: 0xf0e1,
            ddim_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mixture: MixtureSpec,
    pub counts: SplitCounts,
    pub schedule: ScheduleConfig,
    pub arch: ArchConfig,
    pub ddpm: TrainConfig,
    pub clf: TrainConfig,
    pub plan: TimestepPlan,
    pub spec: FeatureSpec,
    pub task: Task,
    pub seeds: Seeds,
    pub foreign: ForeignConfig,
    pub calibration: CalibrationObjective,
    /// Number of steps each plan may query in the plan comparison.
    pub query_budget: usize,
    /// Components used by the class probe.
    pub probe_components: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let schedule = ScheduleConfig::default();
        Self {
            name: "default".into(),
            mixture: MixtureSpec::default(),
            counts: SplitCounts::default(),
            arch: ArchConfig {
                num_steps: schedule.num_steps,
                ..ArchConfig::default()
            },
            schedule,
            ddpm: TrainConfig::ddpm(),
            clf: TrainConfig::classifier(),
            plan: TimestepPlan::Full,
            spec: FeatureSpec::all(),
            task: Task::Oa,
            seeds: Seeds::default(),
            foreign: ForeignConfig::default(),
            calibration: CalibrationObjective::BalancedAccuracy,
            query_budget: 10,
            probe_components: vec![0, 3],
        }
    }
}

impl ExperimentConfig {
    /// Long training in eight dimensions, so the model memorizes its
    /// members. The extra coordinates are isotropic noise around each corner.
    pub fn overfit() -> Self {
        let base = Self::default();
        let mixture = MixtureSpec::embedded(8, 5.0, [1.0, 1.5, 1.2, 1.8], 0.75, 1.2);
        Self {
            name: "overfit".into(),
            counts: SplitCounts {
                member_train: 256,
                member_eval: 256,
                holdout: 256,
                external_train: 256,
                external_eval: 256,
                belonging_train: 500,
                belonging_eval: 500,
            },
            ddpm: TrainConfig {
                epochs: 3000,
                batch_size: 64,
                lr: 2e-3,
                weight_decay: 0.0,
                sched_step_epochs: 1000,
                sched_gamma: 0.5,
                seed: 0,
            },
            arch: ArchConfig {
                data_dim: mixture.dim,
                hidden_widths: vec![128, 128],
                ..base.arch.clone()
            },
            spec: FeatureSpec {
                repeats: 16,
                ..base.spec.clone()
            },
            mixture,
            ..base
        }
    }

    /// Small everything; for fast tests.
    pub fn tiny() -> Self {
        let schedule = ScheduleConfig {
            num_steps: 20,
            ..ScheduleConfig::default()
        };
        Self {
            name: "tiny".into(),
            counts: SplitCounts {
                member_train: 24,
                member_eval: 24,
                holdout: 24,
                external_train: 24,
                external_eval: 24,
                belonging_train: 24,
                belonging_eval: 24,
            },
            arch: ArchConfig {
                data_dim: 2,
                hidden_widths: vec![16, 16],
                embed_dim: 8,
                num_steps: 20,
            },
            schedule,
            ddpm: TrainConfig {
                epochs: 20,
                ..TrainConfig::ddpm()
            },
            clf: TrainConfig {
                epochs: 10,
                ..TrainConfig::classifier()
            },
            foreign: ForeignConfig {
                hidden_widths: vec![12, 12],
                seed: 7,
                ddim_steps: 10,
            },
            query_budget: 4,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "overfit" => Ok(Self::overfit()),
            "tiny" => Ok(Self::tiny()),
            _ => param(format!("unknown preset {name:?}")),
        }
    }

    /// Replaces every seed, including the training seeds, with ones derived
    /// from `seed`.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::from_master(seed);
        self.ddpm.seed = crate::rng::mix_key(seed, &[2]);
        self.clf.seed = crate::rng::mix_key(seed, &[5]);
        self.foreign.seed = crate::rng::mix_key(seed, &[7]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        self.counts.validate()?;
        self.arch.validate()?;
        self.ddpm.validate()?;
        self.clf.validate()?;
        let schedule = crate::schedule::NoiseSchedule::from_config(&self.schedule)?;
        if self.arch.data_dim != self.mixture.dim {
            return param("arch.data_dim must equal mixture.dim");
        }
        if self.arch.num_steps != schedule.num_steps() {
            return param("arch.num_steps must equal schedule.num_steps");
        }
        self.plan.resolve(schedule.num_steps())?;
        self.spec.validate(schedule.num_steps())?;
        if self.query_budget == 0 || self.query_budget > schedule.num_steps() {
            return param("query_budget must lie in 1..=num_steps");
        }
        if self.probe_components.len() < 2 || self.probe_components.iter().any(|&c| c >= self.mixture.components.len())
        {
            return param("probe_components must name at least two existing components");
        }
        let mut foreign = self.arch.clone();
        foreign.hidden_widths = self.foreign.hidden_widths.clone();
        foreign.validate()?;
        crate::sampler::ddim_grid(schedule.num_steps(), self.foreign.ddim_steps)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Param(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, self.to_json().as_bytes())
    }
}
