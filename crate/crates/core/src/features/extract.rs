use rayon::prelude::*;
use serde::Serialize;

use super::{FeatureSpec, GsaConfig, GsaGroups, GsaMode, TimestepPlan, TrajectoryFeatureVector};
use crate::error::{contract, param, Error, Result};
use crate::net::DenoiserParams;
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Binds a network, schedule, plan and spec; computes the spec hash once.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<'a> {
    params: &'a DenoiserParams,
    schedule: &'a NoiseSchedule,
    plan: TimestepPlan,
    steps: Vec<usize>,
    spec: FeatureSpec,
    seed: u64,
    spec_hash: String,
}

#[derive(Serialize)]
struct HashInput<'a> {
    steps: &'a [usize],
    spec: &'a FeatureSpec,
    schedule: &'a crate::schedule::ScheduleConfig,
    arch_hash: String,
    weights: String,
}

fn annotate(sample_id: u64, t: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Extraction {
        sample_id,
        t,
        source: Box::new(e),
    }
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(
        params: &'a DenoiserParams,
        schedule: &'a NoiseSchedule,
        plan: &TimestepPlan,
        spec: &FeatureSpec,
        seed: u64,
    ) -> Result<Self> {
        spec.validate(schedule.num_steps())?;
        if params.arch().num_steps != schedule.num_steps() {
            return param("network and schedule disagree on the number of steps");
        }
        let steps = plan.resolve(schedule.num_steps())?;
        let weights = crate::digest::digest_bytes(
            &params.flat().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
        );
        let spec_hash = crate::digest::digest_json(&HashInput {
            steps: &steps,
            spec,
            schedule: schedule.config(),
            arch_hash: params.arch_hash(),
            weights,
        });
        Ok(Self {
            params,
            schedule,
            plan: plan.clone(),
            steps,
            spec: spec.clone(),
            seed,
            spec_hash,
        })
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn plan(&self) -> &TimestepPlan {
        &self.plan
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn params(&self) -> &DenoiserParams {
        self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        self.schedule
    }

    /// Length of every vector this extractor produces.
    pub fn dim(&self) -> usize {
        let gsa = match &self.spec.gsa {
            Some(g) => group_count(self.params, g.groups),
            None => 0,
        };
        self.steps.len() * self.spec.families_per_step() + gsa
    }

    fn noise(&self, sample_id: u64, t: usize, rep: usize) -> Vec<f64> {
        let mut r = rng::keyed(
            self.seed,
            &[rng::domain::FEATURE, sample_id, t as u64, rep as u64],
        );
        rng::normal_vec(&mut r, self.params.data_dim())
    }

    pub fn extract(&self, sample_id: u64, label: &str, x: &[f64]) -> Result<TrajectoryFeatureVector> {
        if x.len() != self.params.data_dim() {
            return param(format!(
                "sample {sample_id} has {} coordinates, network expects {}",
                x.len(),
                self.params.data_dim()
            ));
        }
        let spec = &self.spec;
        let pia_eps = if spec.pia_mode {
            Some(self.params.predict_eps(x, 0).map_err(annotate(sample_id, 0))?)
        } else {
            None
        };
        let per_step = spec.families_per_step();
        let mut values = Vec::with_capacity(self.dim());
        if per_step > 0 {
            // PIA noise is deterministic, so every repeat would be identical
            let draws = if spec.pia_mode { 1 } else { spec.repeats };
            let reps = draws as f64;
            for &t in &self.steps {
                let (mut l, mut gx, mut gt) = (0.0, 0.0, 0.0);
                for rep in 0..draws {
                    let eps = match &pia_eps {
                        Some(e) => e.clone(),
                        None => self.noise(sample_id, t, rep),
                    };
                    let n = self
                        .params
                        .step_norms(x, t, &eps, self.schedule, spec.use_grad_x, spec.use_grad_theta)
                        .map_err(annotate(sample_id, t))?;
                    l += if spec.pia_mode && spec.pia_norm_p != 2.0 {
                        pia_p_norm(self.params, self.schedule, x, t, &eps, spec.pia_norm_p)
                            .map_err(annotate(sample_id, t))?
                    } else {
                        n.loss
                    };
                    gx += n.grad_x_sq;
                    gt += n.grad_theta_sq;
                }
                if spec.use_loss {
                    values.push(l / reps);
                }
                if spec.use_grad_x {
                    values.push(gx / reps);
                }
                if spec.use_grad_theta {
                    values.push(gt / reps);
                }
            }
        }
        if let Some(g) = &spec.gsa {
            values.extend(self.gsa(sample_id, x, g)?);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let t = if per_step > 0 { self.steps[(i / per_step).min(self.steps.len() - 1)] } else { 0 };
            return Err(annotate(sample_id, t)(Error::NonFinite { layer: usize::MAX }));
        }
        Ok(TrajectoryFeatureVector {
            sample_id,
            label: label.to_string(),
            values,
            spec_hash: self.spec_hash.clone(),
        })
    }

    /// Parallel extraction; output order follows input order.
    pub fn extract_all(&self, samples: &[(u64, String, Vec<f64>)]) -> Result<Vec<TrajectoryFeatureVector>> {
        samples
            .par_iter()
            .map(|(id, label, x)| self.extract(*id, label, x))
            .collect()
    }

    fn gsa(&self, sample_id: u64, x: &[f64], g: &GsaConfig) -> Result<Vec<f64>> {
        let groups = group_ranges(self.params, g.groups);
        let k = g.subsample.len() as f64;
        let mut mean_grad = vec![0.0; self.params.param_count()];
        let mut mean_sq = vec![0.0; groups.len()];
        for &t in &g.subsample {
            let eps = self.noise(sample_id, t, 0);
            let b = self
                .params
                .loss_and_grads(x, t, &eps, self.schedule, false, true)
                .map_err(annotate(sample_id, t))?;
            let grad = b.grad_theta.expect("requested");
            for (i, r) in groups.iter().enumerate() {
                mean_sq[i] += grad[r.clone()].iter().map(|v| v * v).sum::<f64>() / k;
            }
            for (m, gi) in mean_grad.iter_mut().zip(&grad) {
                *m += gi / k;
            }
        }
        Ok(match g.mode {
            GsaMode::Gsa2 => mean_sq,
            GsaMode::Gsa1 => groups
                .iter()
                .map(|r| mean_grad[r.clone()].iter().map(|v| v * v).sum())
                .collect(),
        })
    }

    /// Builds this extractor's features from vectors produced by `source`,
    /// which must share noise and pia setting and cover a superset of both
    /// the steps and the per-step families. Equal to extracting directly.
    pub fn project_from(
        &self,
        source: &FeatureExtractor<'_>,
        v: &TrajectoryFeatureVector,
    ) -> Result<TrajectoryFeatureVector> {
        let (a, b) = (&source.spec, &self.spec);
        let cols: Option<Vec<usize>> = self
            .steps
            .iter()
            .map(|t| source.steps.iter().position(|s| s == t))
            .collect();
        let compatible = cols.is_some()
            && a.pia_mode == b.pia_mode
            && a.pia_norm_p == b.pia_norm_p
            && a.repeats == b.repeats
            && source.seed == self.seed
            && a.gsa.is_none()
            && b.gsa.is_none()
            && (!b.use_loss || a.use_loss)
            && (!b.use_grad_x || a.use_grad_x)
            && (!b.use_grad_theta || a.use_grad_theta)
            && std::ptr::eq(source.params, self.params);
        if !compatible {
            return contract("source extractor cannot be projected onto this spec");
        }
        if v.spec_hash != source.spec_hash {
            return contract("vector was not produced by the source extractor");
        }
        let src_flags = [a.use_loss, a.use_grad_x, a.use_grad_theta];
        let dst_flags = [b.use_loss, b.use_grad_x, b.use_grad_theta];
        let per = a.families_per_step();
        let mut values = Vec::with_capacity(self.dim());
        for &c in cols.iter().flatten() {
            let chunk = &v.values[c * per..(c + 1) * per];
            let mut idx = 0;
            for f in 0..3 {
                if src_flags[f] {
                    if dst_flags[f] {
                        values.push(chunk[idx]);
                    }
                    idx += 1;
                }
            }
        }
        Ok(TrajectoryFeatureVector {
            sample_id: v.sample_id,
            label: v.label.clone(),
            values,
            spec_hash: self.spec_hash.clone(),
        })
    }
}

fn pia_p_norm(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    x: &[f64],
    t: usize,
    eps: &[f64],
    p: f64,
) -> Result<f64> {
    let x_t = schedule.forward_diffuse(x, t, eps)?;
    let pred = params.predict_eps(&x_t, t)?;
    Ok(pred
        .iter()
        .zip(eps)
        .map(|(a, b)| (a - b).abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p))
}

fn group_ranges(params: &DenoiserParams, groups: GsaGroups) -> Vec<std::ops::Range<usize>> {
    match groups {
        GsaGroups::Layers => (0..params.num_layers()).map(|l| params.layer_range(l)).collect(),
        GsaGroups::All => vec![0..params.param_count()],
    }
}

fn group_count(params: &DenoiserParams, groups: GsaGroups) -> usize {
    match groups {
        GsaGroups::Layers => params.num_layers(),
        GsaGroups::All => 1,
    }
}

/// Trajectory features of a single sample.
pub fn extract_features(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    x: &[f64],
    sample_id: u64,
    plan: &TimestepPlan,
    spec: &FeatureSpec,
    seed: u64,
) -> Result<TrajectoryFeatureVector> {
    FeatureExtractor::new(params, schedule, plan, spec, seed)?.extract(sample_id, "", x)
}

/// GSA aggregates of a single sample, one value per parameter group.
pub fn extract_gsa(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    x: &[f64],
    sample_id: u64,
    gsa: &GsaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = FeatureSpec::gsa_only(gsa.clone());
    let ex = FeatureExtractor::new(params, schedule, &TimestepPlan::Full, &spec, seed)?;
    if x.len() != params.data_dim() {
        return param("sample dimension does not match the network");
    }
    ex.gsa(sample_id, x, gsa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ArchConfig;

    fn setup() -> (DenoiserParams, NoiseSchedule) {
        let s = NoiseSchedule::linear(100, 1e-3, 0.2).unwrap();
        let p = DenoiserParams::init(&ArchConfig { hidden_widths: vec![16, 16], ..ArchConfig::default() }, 7).unwrap();
        (p, s)
    }

    #[test]
    fn full_plan_length() {
        let (p, s) = setup();
        let f = extract_features(&p, &s, &[0.1, 0.2], 3, &TimestepPlan::Full, &FeatureSpec::all(), 1).unwrap();
        assert_eq!(f.values.len(), 300);
        assert!(f.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn zero_residual_constructed() {
        // A bias-only final layer emitting exactly the drawn noise.
        let (_, s) = setup();
        let mut p = DenoiserParams::zeros(ArchConfig { hidden_widths: vec![4], ..ArchConfig::default() }).unwrap();
        let plan = TimestepPlan::Explicit { steps: vec![42] };
        let ex = FeatureExtractor::new(&p, &s, &plan, &FeatureSpec::loss_only(), 9).unwrap();
        let eps = ex.noise(5, 42, 0);
        let last = p.num_layers() - 1;
        p.bias_mut(last).copy_from_slice(&eps);
        let f = extract_features(&p, &s, &[1.0, -1.0], 5, &plan, &FeatureSpec::loss_only(), 9).unwrap();
        assert_eq!(f.values, vec![0.0]);
    }

    #[test]
    fn stochastic_features_reproducible() {
        let (p, s) = setup();
        let plan = TimestepPlan::Strided { stride: 7, offset: 0 };
        let a = extract_features(&p, &s, &[0.5, 0.5], 11, &plan, &FeatureSpec::all(), 3).unwrap();
        let b = extract_features(&p, &s, &[0.5, 0.5], 11, &plan, &FeatureSpec::all(), 3).unwrap();
        let c = extract_features(&p, &s, &[0.5, 0.5], 11, &plan, &FeatureSpec::all(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn pia_is_seed_independent() {
        let (p, s) = setup();
        let spec = FeatureSpec::all().with_pia(true);
        let a = extract_features(&p, &s, &[0.5, -0.5], 1, &TimestepPlan::Full, &spec, 3).unwrap();
        let b = extract_features(&p, &s, &[0.5, -0.5], 1, &TimestepPlan::Full, &spec, 99).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.values), bits(&b.values));
    }

    #[test]
    fn projection_equals_direct_extraction() {
        let (p, s) = setup();
        let plan = TimestepPlan::Strided { stride: 9, offset: 0 };
        let full = FeatureExtractor::new(&p, &s, &plan, &FeatureSpec::all(), 2).unwrap();
        let sub_spec = FeatureSpec::new(true, false, true);
        let sub = FeatureExtractor::new(&p, &s, &plan, &sub_spec, 2).unwrap();
        let v = full.extract(4, "m", &[0.3, 0.9]).unwrap();
        let projected = sub.project_from(&full, &v).unwrap();
        let direct = sub.extract(4, "m", &[0.3, 0.9]).unwrap();
        assert_eq!(projected, direct);
        assert!(full.project_from(&sub, &direct).is_err());

        let window = TimestepPlan::Window { start: 18, end: 40 };
        let win = FeatureExtractor::new(&p, &s, &window, &sub_spec, 2).unwrap();
        let all_steps = FeatureExtractor::new(&p, &s, &TimestepPlan::Full, &FeatureSpec::all(), 2).unwrap();
        let v = all_steps.extract(4, "m", &[0.3, 0.9]).unwrap();
        assert_eq!(win.project_from(&all_steps, &v).unwrap(), win.extract(4, "m", &[0.3, 0.9]).unwrap());
        let vs = full.extract(4, "m", &[0.3, 0.9]).unwrap();
        assert!(win.project_from(&full, &vs).is_err());
    }

    #[test]
    fn gsa_single_group_single_step() {
        let (p, s) = setup();
        let g = GsaConfig { mode: GsaMode::Gsa2, groups: GsaGroups::All, subsample: vec![30] };
        let agg = extract_gsa(&p, &s, &[0.2, 0.1], 8, &g, 5).unwrap();
        let ex = FeatureExtractor::new(&p, &s, &TimestepPlan::Full, &FeatureSpec::loss_only(), 5).unwrap();
        let eps = ex.noise(8, 30, 0);
        let b = p.loss_and_grads(&[0.2, 0.1], 30, &eps, &s, false, true).unwrap();
        let sq: f64 = b.grad_theta.unwrap().iter().map(|v| v * v).sum();
        assert_eq!(agg.len(), 1);
        assert!(((agg[0] - sq) / sq).abs() < 1e-12);
    }

    #[test]
    fn gsa2_dominates_gsa1() {
        let (p, s) = setup();
        for id in 0..5 {
            let mut g = GsaConfig::default_for(GsaMode::Gsa1, 100);
            let g1 = extract_gsa(&p, &s, &[0.4, -0.3], id, &g, 1).unwrap();
            g.mode = GsaMode::Gsa2;
            let g2 = extract_gsa(&p, &s, &[0.4, -0.3], id, &g, 1).unwrap();
            assert_eq!(g1.len(), p.num_layers());
            for (a, b) in g1.iter().zip(&g2) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn gsa_empty_subsample_rejected() {
        let (p, s) = setup();
        let g = GsaConfig { mode: GsaMode::Gsa1, groups: GsaGroups::Layers, subsample: vec![] };
        assert!(extract_gsa(&p, &s, &[0.0, 0.0], 0, &g, 0).is_err());
    }

    #[test]
    fn extraction_errors_carry_sample_and_step() {
        let (p, s) = setup();
        let plan = TimestepPlan::Explicit { steps: vec![3] };
        let err = extract_features(&p, &s, &[f64::NAN, 0.0], 77, &plan, &FeatureSpec::loss_only(), 0).unwrap_err();
        assert!(matches!(err, Error::Extraction { sample_id: 77, t: 3, .. }));
        assert!(err.is_numeric());
    }

    #[test]
    fn pia_p_norm_variant() {
        let (p, s) = setup();
        let plan = TimestepPlan::Explicit { steps: vec![10] };
        let mut spec = FeatureSpec::loss_only().with_pia(true);
        let sq = extract_features(&p, &s, &[0.3, 0.3], 1, &plan, &spec, 0).unwrap().values[0];
        spec.pia_norm_p = 1.0;
        let l1 = extract_features(&p, &s, &[0.3, 0.3], 1, &plan, &spec, 0).unwrap().values[0];
        // ||r||_1 >= ||r||_2 = sqrt(sq)
        assert!(l1 >= sq.sqrt() - 1e-15);
    }
}
