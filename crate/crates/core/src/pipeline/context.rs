use std::collections::BTreeMap;

use crate::config::ExperimentConfig;
use crate::data::{gen_data, generated, split, DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSpec, TimestepPlan, TrajectoryFeatureVector};
use crate::net::DenoiserParams;
use crate::sampler::{sample_dataset, SamplerKind};
use crate::schedule::NoiseSchedule;
use crate::trainer::{train_ddpm, EpochLoss};

/// Splits whose full-trajectory features are extracted up front.
const BANKED: [&str; 6] = [
    "member_train",
    "member_eval",
    "external_train",
    "external_eval",
    "belonging_train",
    "belonging_eval",
];

/// Already available artifacts a context can be assembled from.
pub struct ContextParts {
    pub bundle: DatasetBundle,
    pub params: DenoiserParams,
    pub ddpm_history: Vec<EpochLoss>,
}

/// A trained model with its data and cached trajectory features.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub bundle: DatasetBundle,
    pub params: DenoiserParams,
    pub ddpm_history: Vec<EpochLoss>,
    /// Full-plan, all-family features keyed by (pia, split).
    bank: BTreeMap<(bool, &'static str), Vec<TrajectoryFeatureVector>>,
}

/// Draws the belonging splits from `params`.
pub fn sample_belonging(cfg: &ExperimentConfig, params: &DenoiserParams, bundle: &mut DatasetBundle) -> Result<()> {
    let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
    let (nt, ne) = (cfg.counts.belonging_train, cfg.counts.belonging_eval);
    let mut points = sample_dataset(params, &schedule, nt + ne, SamplerKind::Ancestral, cfg.seeds.sample)?;
    let eval = points.split_off(nt);
    bundle.belonging_train = generated(split::BELONGING_TRAIN, points);
    bundle.belonging_eval = generated(split::BELONGING_EVAL, eval);
    Ok(())
}

/// Trains the diffusion model on every member.
pub fn train_model(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<(DenoiserParams, Vec<EpochLoss>)> {
    let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
    train_ddpm(&bundle.members(), &schedule, &cfg.arch, &cfg.ddpm)
}

impl Context {
    /// Runs every stage from data generation onwards.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut bundle = gen_data(&cfg.mixture, &cfg.counts, cfg.seeds.data)?;
        let (params, ddpm_history) = train_model(cfg, &bundle)?;
        sample_belonging(cfg, &params, &mut bundle)?;
        Self::from_parts(cfg, ContextParts { bundle, params, ddpm_history })
    }

    pub fn from_parts(cfg: &ExperimentConfig, parts: ContextParts) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
        if parts.params.arch() != &cfg.arch {
            return Err(Error::Pipeline("checkpoint architecture differs from the config".into()));
        }
        if parts.bundle.belonging_train.is_empty() || parts.bundle.belonging_eval.is_empty() {
            return Err(Error::Pipeline("belonging samples missing; run sampling first".into()));
        }
        parts.bundle.check_partition()?;
        let mut ctx = Self {
            cfg: cfg.clone(),
            schedule,
            bundle: parts.bundle,
            params: parts.params,
            ddpm_history: parts.ddpm_history,
            bank: BTreeMap::new(),
        };
        for pia in [false, true] {
            let spec = ctx.bank_spec(pia);
            for name in BANKED {
                let v = ctx.extract_direct(ctx.split(name)?, &TimestepPlan::Full, &spec)?;
                ctx.bank.insert((pia, name), v);
            }
        }
        Ok(ctx)
    }

    /// Every per-step family, sharing the configured noise settings.
    fn bank_spec(&self, pia: bool) -> FeatureSpec {
        FeatureSpec {
            gsa: None,
            ..FeatureSpec::all().with_pia(pia).with_noise(self.cfg.spec.pia_norm_p, self.cfg.spec.repeats)
        }
    }

    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        self.bundle
            .splits()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s.as_slice())
            .ok_or_else(|| Error::Pipeline(format!("unknown split {name}")))
    }

    pub fn extractor(&self, plan: &TimestepPlan, spec: &FeatureSpec) -> Result<FeatureExtractor<'_>> {
        FeatureExtractor::new(&self.params, &self.schedule, plan, spec, self.cfg.seeds.feature)
    }

    pub fn extract_direct(
        &self,
        samples: &[Sample],
        plan: &TimestepPlan,
        spec: &FeatureSpec,
    ) -> Result<Vec<TrajectoryFeatureVector>> {
        self.extract_with(&self.params, samples, plan, spec)
    }

    /// Features of `samples` under another network.
    pub fn extract_with(
        &self,
        params: &DenoiserParams,
        samples: &[Sample],
        plan: &TimestepPlan,
        spec: &FeatureSpec,
    ) -> Result<Vec<TrajectoryFeatureVector>> {
        let ex = FeatureExtractor::new(params, &self.schedule, plan, spec, self.cfg.seeds.feature)?;
        let label = samples
            .first()
            .map(|s| split_name(s.id))
            .unwrap_or("");
        let rows: Vec<(u64, String, Vec<f64>)> = samples
            .iter()
            .map(|s| (s.id, label.to_string(), s.x.clone()))
            .collect();
        ex.extract_all(&rows)
    }

    /// Features of a named split, projected from the cache when possible.
    pub fn features(&self, name: &str, plan: &TimestepPlan, spec: &FeatureSpec) -> Result<Vec<TrajectoryFeatureVector>> {
        let cached = BANKED.iter().find(|&&b| b == name).and_then(|b| self.bank.get(&(spec.pia_mode, *b)));
        let target = self.extractor(plan, spec)?;
        if let Some(vectors) = cached {
            let source = self.extractor(&TimestepPlan::Full, &self.bank_spec(spec.pia_mode))?;
            if let Ok(projected) = vectors.iter().map(|v| target.project_from(&source, v)).collect() {
                return Ok(projected);
            }
        }
        self.extract_direct(self.split(name)?, plan, spec)
    }

    /// Raw coordinates of a split, for the model-blind baseline.
    pub fn raw(&self, name: &str) -> Result<Vec<(u64, Vec<f64>)>> {
        Ok(self.split(name)?.iter().map(|s| (s.id, s.x.clone())).collect())
    }
}

pub fn split_name(id: u64) -> &'static str {
    match split::code_of(id) {
        split::MEMBER_TRAIN => "member_train",
        split::MEMBER_EVAL => "member_eval",
        split::HOLDOUT => "holdout",
        split::EXTERNAL_TRAIN => "external_train",
        split::EXTERNAL_EVAL => "external_eval",
        split::BELONGING_TRAIN => "belonging_train",
        split::BELONGING_EVAL => "belonging_eval",
        split::FOREIGN_DDIM => "foreign_ddim",
        split::FOREIGN_NET => "foreign_net",
        _ => "other",
    }
}
