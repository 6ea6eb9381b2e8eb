use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Which diffusion steps a trajectory is probed at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum TimestepPlan {
    /// Every step `0..T`.
    Full,
    /// `offset, offset + stride, ...` below `T`.
    Strided { stride: usize, #[serde(default)] offset: usize },
    /// Contiguous `start..end` (end exclusive).
    Window { start: usize, end: usize },
    Explicit { steps: Vec<usize> },
}

impl TimestepPlan {
    /// Sorted, strictly increasing, nonempty list of steps in `0..num_steps`.
    pub fn resolve(&self, num_steps: usize) -> Result<Vec<usize>> {
        let steps: Vec<usize> = match self {
            TimestepPlan::Full => (0..num_steps).collect(),
            TimestepPlan::Strided { stride, offset } => {
                if *stride == 0 {
                    return param("stride must be >= 1");
                }
                (*offset..num_steps).step_by(*stride).collect()
            }
            TimestepPlan::Window { start, end } => {
                if end > &num_steps {
                    return param(format!("window end {end} exceeds {num_steps} steps"));
                }
                (*start..*end).collect()
            }
            TimestepPlan::Explicit { steps } => {
                if steps.windows(2).any(|w| w[0] >= w[1]) {
                    return param("explicit steps must be strictly increasing");
                }
                if let Some(bad) = steps.iter().find(|&&t| t >= num_steps) {
                    return param(format!("explicit step {bad} out of range 0..{num_steps}"));
                }
                steps.clone()
            }
        };
        if steps.is_empty() {
            return param("timestep plan resolves to no steps");
        }
        Ok(steps)
    }

    /// Short human-readable tag, used in report tables.
    pub fn label(&self) -> String {
        match self {
            TimestepPlan::Full => "full".into(),
            TimestepPlan::Strided { stride, offset } => format!("stride{stride}+{offset}"),
            TimestepPlan::Window { start, end } => format!("window{start}-{end}"),
            TimestepPlan::Explicit { steps } => format!("explicit{}", steps.len()),
        }
    }
}

/// `k` evenly spaced steps from 0 to `num_steps - 1`.
pub fn evenly_spaced(num_steps: usize, k: usize) -> Vec<usize> {
    if k <= 1 {
        return vec![0];
    }
    let last = (num_steps - 1) as f64;
    let mut v: Vec<usize> = (0..k)
        .map(|i| (last * i as f64 / (k - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}
