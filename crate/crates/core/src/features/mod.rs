//! Trajectory features: per-step loss and gradient norms along the forward
//! trajectory of a sample, plus GSA aggregates, normalization and caching.

mod cache;
mod extract;
mod norm;
mod plan;

pub use cache::{cache_read, cache_write, CacheManifest};
pub use extract::{extract_features, extract_gsa, FeatureExtractor};
pub use norm::NormStats;
pub use plan::{evenly_spaced, TimestepPlan};

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsaMode {
    /// `||mean_t grad_i||^2`
    Gsa1,
    /// `mean_t ||grad_i||^2`
    Gsa2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsaGroups {
    /// One group per layer (weights and bias together).
    Layers,
    /// A single group holding every parameter.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsaConfig {
    pub mode: GsaMode,
    pub groups: GsaGroups,
    pub subsample: Vec<usize>,
}

impl GsaConfig {
    /// Layer groups over 10 evenly spaced steps.
    pub fn default_for(mode: GsaMode, num_steps: usize) -> Self {
        Self {
            mode,
            groups: GsaGroups::Layers,
            subsample: evenly_spaced(num_steps, 10),
        }
    }
}

fn default_p() -> f64 {
    2.0
}

fn default_repeats() -> usize {
    1
}

/// Which feature families are extracted and how the noise is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub use_loss: bool,
    pub use_grad_x: bool,
    pub use_grad_theta: bool,
    /// Replace the drawn noise by `eps_theta(x, 0)` at every step.
    #[serde(default)]
    pub pia_mode: bool,
    /// Norm order of the PIA loss value. `2` gives the squared norm, the same
    /// quantity as the ordinary loss; any other `p` gives `||r||_p`.
    #[serde(default = "default_p")]
    pub pia_norm_p: f64,
    /// Independent noise draws averaged per step.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub gsa: Option<GsaConfig>,
}

impl FeatureSpec {
    pub fn new(use_loss: bool, use_grad_x: bool, use_grad_theta: bool) -> Self {
        Self {
            use_loss,
            use_grad_x,
            use_grad_theta,
            pia_mode: false,
            pia_norm_p: 2.0,
            repeats: 1,
            gsa: None,
        }
    }

    pub fn loss_only() -> Self {
        Self::new(true, false, false)
    }

    pub fn all() -> Self {
        Self::new(true, true, true)
    }

    pub fn with_pia(mut self, pia: bool) -> Self {
        self.pia_mode = pia;
        self
    }

    /// Sets the PIA norm and the number of noise draws averaged per step.
    pub fn with_noise(mut self, pia_norm_p: f64, repeats: usize) -> Self {
        self.pia_norm_p = pia_norm_p;
        self.repeats = repeats;
        self
    }

    /// GSA aggregates only.
    pub fn gsa_only(gsa: GsaConfig) -> Self {
        Self {
            gsa: Some(gsa),
            ..Self::new(false, false, false)
        }
    }

    pub fn families_per_step(&self) -> usize {
        [self.use_loss, self.use_grad_x, self.use_grad_theta]
            .iter()
            .filter(|&&f| f)
            .count()
    }

    pub fn validate(&self, num_steps: usize) -> Result<()> {
        if self.families_per_step() == 0 && self.gsa.is_none() {
            return param("at least one feature family must be enabled");
        }
        if self.repeats == 0 {
            return param("repeats must be >= 1");
        }
        if !(self.pia_norm_p >= 1.0) {
            return param(format!("pia_norm_p must be >= 1, got {}", self.pia_norm_p));
        }
        if let Some(g) = &self.gsa {
            if g.subsample.is_empty() {
                return param("GSA subsample is empty");
            }
            if let Some(bad) = g.subsample.iter().find(|&&t| t >= num_steps) {
                return param(format!("GSA step {bad} out of range 0..{num_steps}"));
            }
        }
        Ok(())
    }

    /// Short tag such as `L+gx+gθ` or `PIA:L`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_loss {
            parts.push("L");
        }
        if self.use_grad_x {
            parts.push("gx");
        }
        if self.use_grad_theta {
            parts.push("gtheta");
        }
        if let Some(g) = &self.gsa {
            parts.push(match g.mode {
                GsaMode::Gsa1 => "gsa1",
                GsaMode::Gsa2 => "gsa2",
            });
        }
        let body = parts.join("+");
        if self.pia_mode {
            format!("pia:{body}")
        } else {
            body
        }
    }
}

/// Feature vector of one sample. Values are ordered by step (ascending) and,
/// within a step, by family `L, grad_x, grad_theta`; GSA aggregates follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFeatureVector {
    pub sample_id: u64,
    pub label: String,
    pub values: Vec<f64>,
    pub spec_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(FeatureSpec::new(false, false, false).validate(10).is_err());
        assert!(FeatureSpec::loss_only().validate(10).is_ok());
        let mut s = FeatureSpec::all();
        s.repeats = 0;
        assert!(s.validate(10).is_err());
        let g = GsaConfig { mode: GsaMode::Gsa2, groups: GsaGroups::All, subsample: vec![] };
        assert!(FeatureSpec::gsa_only(g).validate(10).is_err());
        let g = GsaConfig { mode: GsaMode::Gsa2, groups: GsaGroups::All, subsample: vec![10] };
        assert!(FeatureSpec::gsa_only(g).validate(10).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"use_loss":true,"use_grad_x":false,"use_grad_theta":false,"bogus":1}"#;
        assert!(serde_json::from_str::<FeatureSpec>(bad).is_err());
        let ok = r#"{"use_loss":true,"use_grad_x":false,"use_grad_theta":false}"#;
        let s: FeatureSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(s, FeatureSpec::loss_only());
    }
}
