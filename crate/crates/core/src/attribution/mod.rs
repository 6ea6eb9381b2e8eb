//! Origin attribution: the linear classifier over trajectory features, the
//! single-step threshold attacks and the model-blind baseline.

mod classifier;
mod threshold;

pub use classifier::{
    model_blind_baseline, raw_vectors, softmax_xent, train_linear, ClassifierEpoch, LinearClassifier, RAW_DATA_HASH,
};
pub use threshold::{calibrate_threshold_attack, calibrate_with, threshold_decide, CalibrationObjective, ThresholdAttack};

use serde::{Deserialize, Serialize};

/// Where a sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginLabel {
    /// Part of the diffusion model's training set.
    Member,
    /// Generated by the model.
    Belonging,
    /// Real data the model never saw.
    External,
}

impl OriginLabel {
    pub const ALL: [OriginLabel; 3] = [OriginLabel::Member, OriginLabel::Belonging, OriginLabel::External];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OriginLabel::Member => "member",
            OriginLabel::Belonging => "belonging",
            OriginLabel::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

/// Classification task. Binary tasks put the positive class at index 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Member (positive) vs external.
    Mia,
    /// Belonging (positive) vs everything else.
    Ma,
    /// Member / belonging / external.
    Oa,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Mia | Task::Ma => 2,
            Task::Oa => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Mia => "mia",
            Task::Ma => "ma",
            Task::Oa => "oa",
        }
    }

    /// Class index of an origin under this task, or `None` when the origin
    /// does not take part (external data in MIA is class 0; belonging data is
    /// excluded from MIA).
    pub fn class_of(self, label: OriginLabel) -> Option<usize> {
        match self {
            Task::Mia => match label {
                OriginLabel::Member => Some(1),
                OriginLabel::External => Some(0),
                OriginLabel::Belonging => None,
            },
            Task::Ma => Some((label == OriginLabel::Belonging) as usize),
            Task::Oa => Some(label.index()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_class_maps() {
        assert_eq!(Task::Mia.class_of(OriginLabel::Member), Some(1));
        assert_eq!(Task::Mia.class_of(OriginLabel::Belonging), None);
        assert_eq!(Task::Ma.class_of(OriginLabel::Belonging), Some(1));
        assert_eq!(Task::Ma.class_of(OriginLabel::External), Some(0));
        assert_eq!(Task::Ma.class_of(OriginLabel::Member), Some(0));
        let oa: Vec<_> = OriginLabel::ALL.iter().map(|&l| Task::Oa.class_of(l).unwrap()).collect();
        assert_eq!(oa, vec![0, 1, 2]);
        assert_eq!(OriginLabel::parse("belonging"), Some(OriginLabel::Belonging));
    }
}
