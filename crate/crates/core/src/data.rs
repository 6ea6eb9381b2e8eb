//! Synthetic Gaussian-mixture datasets with a controllable external shift.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, param, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sigma: f64,
}

/// Base mixture plus the transform applied to the external set: every
/// component mean is offset by `shift` and every sigma multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: Vec<MixtureComponent>,
    pub shift: Vec<f64>,
    pub scale: f64,
}

impl Default for MixtureSpec {
    /// Four components on the corners of a square, with unequal spreads.
    fn default() -> Self {
        let corner = |mx: f64, my: f64, sigma: f64| MixtureComponent {
            weight: 0.25,
            mean: vec![mx, my],
            sigma,
        };
        Self {
            dim: 2,
            components: vec![
                corner(-1.5, -1.5, 0.3),
                corner(1.5, -1.5, 0.5),
                corner(-1.5, 1.5, 0.4),
                corner(1.5, 1.5, 0.6),
            ],
            shift: vec![0.3, 0.0],
            scale: 1.2,
        }
    }
}

impl MixtureSpec {
    /// The four square corners at `±half_side` in the first two coordinates
    /// of `dim`, with spreads `sigmas` and the shift along the first axis.
    pub fn embedded(dim: usize, half_side: f64, sigmas: [f64; 4], shift: f64, scale: f64) -> Self {
        let signs = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        let components = signs
            .iter()
            .zip(sigmas)
            .map(|(&(sx, sy), sigma)| {
                let mut mean = vec![0.0; dim];
                mean[0] = sx * half_side;
                mean[1] = sy * half_side;
                MixtureComponent { weight: 0.25, mean, sigma }
            })
            .collect();
        let mut shift_v = vec![0.0; dim];
        shift_v[0] = shift;
        Self {
            dim,
            components,
            shift: shift_v,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.components.is_empty() {
            return param("mixture needs a positive dimension and at least one component");
        }
        if self.shift.len() != self.dim {
            return param("shift length must equal dim");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return param("scale must be positive");
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != self.dim {
                return param(format!("component {i} mean has wrong length"));
            }
            if !(c.weight > 0.0) || !(c.sigma > 0.0) || !c.sigma.is_finite() {
                return param(format!("component {i} needs positive weight and sigma"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return param(format!("component weights sum to {total}, not 1"));
        }
        Ok(())
    }

    /// Same mixture restricted to a subset of components, reweighted.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() || keep.iter().any(|&k| k >= self.components.len()) {
            return param("invalid component subset");
        }
        let mut components: Vec<MixtureComponent> = keep.iter().map(|&k| self.components[k].clone()).collect();
        let total: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= total);
        Ok(Self { components, ..self.clone() })
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// One draw. `external` applies the shift and scale.
    pub fn draw(&self, rng: &mut impl Rng, external: bool) -> (usize, Vec<f64>) {
        let k = self.pick_component(rng.random::<f64>());
        let c = &self.components[k];
        let z = rng::normal_vec(rng, self.dim);
        let (sigma, offset) = if external {
            (c.sigma * self.scale, self.shift.as_slice())
        } else {
            (c.sigma, &[][..])
        };
        let x = (0..self.dim)
            .map(|d| c.mean[d] + offset.get(d).copied().unwrap_or(0.0) + sigma * z[d])
            .collect();
        (k, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub member_train: usize,
    pub member_eval: usize,
    pub holdout: usize,
    pub external_train: usize,
    pub external_eval: usize,
    pub belonging_train: usize,
    pub belonging_eval: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            member_train: 128,
            member_eval: 128,
            holdout: 256,
            external_train: 128,
            external_eval: 128,
            belonging_train: 500,
            belonging_eval: 500,
        }
    }
}

impl SplitCounts {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.member_train,
            self.member_eval,
            self.holdout,
            self.external_train,
            self.external_eval,
            self.belonging_train,
            self.belonging_eval,
        ];
        if all.contains(&0) {
            return param("every split needs at least one sample");
        }
        Ok(())
    }

    pub fn members(&self) -> usize {
        self.member_train + self.member_eval
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x: Vec<f64>,
    /// Mixture component, or `None` for generated data.
    pub component: Option<usize>,
}

/// Split codes occupy the upper 32 bits of every sample id.
pub mod split {
    pub const MEMBER_TRAIN: u64 = 1;
    pub const MEMBER_EVAL: u64 = 2;
    pub const HOLDOUT: u64 = 3;
    pub const EXTERNAL_TRAIN: u64 = 4;
    pub const EXTERNAL_EVAL: u64 = 5;
    pub const BELONGING_TRAIN: u64 = 6;
    pub const BELONGING_EVAL: u64 = 7;
    pub const FOREIGN_DDIM: u64 = 8;
    pub const FOREIGN_NET: u64 = 9;
    pub const CONTROL: u64 = 10;

    pub fn id(code: u64, index: usize) -> u64 {
        (code << 32) | index as u64
    }

    pub fn code_of(id: u64) -> u64 {
        id >> 32
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub member_train: Vec<Sample>,
    pub member_eval: Vec<Sample>,
    pub holdout: Vec<Sample>,
    pub external_train: Vec<Sample>,
    pub external_eval: Vec<Sample>,
    pub belonging_train: Vec<Sample>,
    pub belonging_eval: Vec<Sample>,
    pub foreign_ddim: Vec<Sample>,
    pub foreign_net: Vec<Sample>,
    pub mixture: Option<MixtureSpec>,
    pub seed: u64,
}

fn draw_split(spec: &MixtureSpec, seed: u64, code: u64, n: usize, external: bool) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut r = rng::keyed(seed, &[rng::domain::DATA, code, i as u64]);
            let (k, x) = spec.draw(&mut r, external);
            Sample {
                id: split::id(code, i),
                x,
                component: Some(k),
            }
        })
        .collect()
}

/// Wraps generated points as samples of a split.
pub fn generated(code: u64, points: Vec<Vec<f64>>) -> Vec<Sample> {
    points
        .into_iter()
        .enumerate()
        .map(|(i, x)| Sample {
            id: split::id(code, i),
            x,
            component: None,
        })
        .collect()
}

/// Real-data splits; belonging and foreign sets are left empty.
pub fn gen_data(spec: &MixtureSpec, counts: &SplitCounts, seed: u64) -> Result<DatasetBundle> {
    spec.validate()?;
    counts.validate()?;
    Ok(DatasetBundle {
        member_train: draw_split(spec, seed, split::MEMBER_TRAIN, counts.member_train, false),
        member_eval: draw_split(spec, seed, split::MEMBER_EVAL, counts.member_eval, false),
        holdout: draw_split(spec, seed, split::HOLDOUT, counts.holdout, false),
        external_train: draw_split(spec, seed, split::EXTERNAL_TRAIN, counts.external_train, true),
        external_eval: draw_split(spec, seed, split::EXTERNAL_EVAL, counts.external_eval, true),
        mixture: Some(spec.clone()),
        seed,
        ..Default::default()
    })
}

impl DatasetBundle {
    /// Everything the diffusion model trains on.
    pub fn members(&self) -> Vec<Vec<f64>> {
        self.member_train
            .iter()
            .chain(&self.member_eval)
            .map(|s| s.x.clone())
            .collect()
    }

    pub fn splits(&self) -> [(&'static str, &Vec<Sample>); 9] {
        [
            ("member_train", &self.member_train),
            ("member_eval", &self.member_eval),
            ("holdout", &self.holdout),
            ("external_train", &self.external_train),
            ("external_eval", &self.external_eval),
            ("belonging_train", &self.belonging_train),
            ("belonging_eval", &self.belonging_eval),
            ("foreign_ddim", &self.foreign_ddim),
            ("foreign_net", &self.foreign_net),
        ]
    }

    /// Checks that ids are unique and carry their split code, so no
    /// evaluation sample can also be a training sample.
    pub fn check_partition(&self) -> Result<()> {
        let codes = [
            split::MEMBER_TRAIN,
            split::MEMBER_EVAL,
            split::HOLDOUT,
            split::EXTERNAL_TRAIN,
            split::EXTERNAL_EVAL,
            split::BELONGING_TRAIN,
            split::BELONGING_EVAL,
            split::FOREIGN_DDIM,
            split::FOREIGN_NET,
        ];
        let mut seen = HashSet::new();
        for ((name, samples), code) in self.splits().into_iter().zip(codes) {
            for s in samples {
                if split::code_of(s.id) != code {
                    return contract(format!("sample {} is not tagged as {name}", s.id));
                }
                if !seen.insert(s.id) {
                    return contract(format!("sample id {} appears twice", s.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_and_var(xs: &[Sample], d: usize) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().map(|s| s.x[d]).sum::<f64>() / n;
        let v = xs.iter().map(|s| (s.x[d] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn no_shift_external_matches_holdout() {
        let spec = MixtureSpec {
            shift: vec![0.0, 0.0],
            scale: 1.0,
            ..MixtureSpec::default()
        };
        let counts = SplitCounts {
            holdout: 4000,
            external_eval: 4000,
            ..SplitCounts::default()
        };
        let b = gen_data(&spec, &counts, 3).unwrap();
        for d in 0..2 {
            let (m1, v1) = mean_and_var(&b.holdout, d);
            let (m2, v2) = mean_and_var(&b.external_eval, d);
            let se = (v1 / 4000.0 + v2 / 4000.0).sqrt();
            assert!((m1 - m2).abs() < 3.0 * se, "dim {d}: {m1} vs {m2}");
        }
    }

    #[test]
    fn shift_moves_external_mean() {
        let spec = MixtureSpec {
            shift: vec![2.0, -1.0],
            scale: 1.0,
            ..MixtureSpec::default()
        };
        let counts = SplitCounts {
            holdout: 3000,
            external_eval: 3000,
            ..SplitCounts::default()
        };
        let b = gen_data(&spec, &counts, 5).unwrap();
        let d0 = mean_and_var(&b.external_eval, 0).0 - mean_and_var(&b.holdout, 0).0;
        let d1 = mean_and_var(&b.external_eval, 1).0 - mean_and_var(&b.holdout, 1).0;
        assert!((d0 - 2.0).abs() < 0.2 && (d1 + 1.0).abs() < 0.2);
    }

    #[test]
    fn seeded_and_partitioned() {
        let a = gen_data(&MixtureSpec::default(), &SplitCounts::default(), 9).unwrap();
        let b = gen_data(&MixtureSpec::default(), &SplitCounts::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = gen_data(&MixtureSpec::default(), &SplitCounts::default(), 10).unwrap();
        assert_ne!(a.member_train, c.member_train);
        a.check_partition().unwrap();
        let mut bad = a.clone();
        bad.member_eval.push(bad.member_train[0].clone());
        assert!(bad.check_partition().is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = MixtureSpec::default();
        s.components[0].weight = 0.5;
        assert!(s.validate().is_err());
        let mut s = MixtureSpec::default();
        s.components[1].sigma = 0.0;
        assert!(s.validate().is_err());
        assert!(gen_data(
            &MixtureSpec::default(),
            &SplitCounts { holdout: 0, ..Default::default() },
            0
        )
        .is_err());
    }

    #[test]
    fn restrict_reweights() {
        let s = MixtureSpec::default().restrict(&[0, 3]).unwrap();
        assert_eq!(s.components.len(), 2);
        assert!((s.components[0].weight - 0.5).abs() < 1e-15);
        s.validate().unwrap();
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let spec = MixtureSpec::default();
        let b = gen_data(&spec, &SplitCounts { holdout: 8000, ..Default::default() }, 1).unwrap();
        for k in 0..4 {
            let f = b.holdout.iter().filter(|s| s.component == Some(k)).count() as f64 / 8000.0;
            assert!((f - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 8000.0).sqrt());
        }
    }
}
