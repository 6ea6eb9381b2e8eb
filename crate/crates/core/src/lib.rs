//! Trajectory forensics for denoising diffusion models.
//!
//! A small DDPM (noise schedule, MLP denoiser with hand-written backprop,
//! AdamW trainer, ancestral and DDIM samplers) together with the tooling to
//! extract per-timestep loss and gradient statistics from it, train linear
//! attribution classifiers on them and score the result.

pub mod attribution;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod digest;
pub mod error;
pub mod features;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod trainer;

pub use attribution::{
    calibrate_threshold_attack, model_blind_baseline, softmax_xent, threshold_decide, train_linear,
    LinearClassifier, OriginLabel, Task, ThresholdAttack,
};
pub use config::ExperimentConfig;
pub use data::{gen_data, DatasetBundle, MixtureSpec, Sample, SplitCounts};
pub use error::{Error, Result};
pub use features::{
    extract_features, extract_gsa, FeatureExtractor, FeatureSpec, GsaConfig, GsaGroups, GsaMode, NormStats,
    TimestepPlan, TrajectoryFeatureVector,
};
pub use metrics::{
    asr, class_balanced_accuracy, one_vs_rest_report, roc_auc, tpr_at_fpr, AttackReport, RocCurve,
};
pub use net::{ArchConfig, DenoiserParams, GradBundle, StepNorms};
pub use pipeline::Context;
pub use optim::{adamw_step, step_lr, AdamWHyper, AdamWState, TrainConfig};
pub use sampler::{sample_dataset, SamplerKind};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use trainer::{train_ddpm, EpochLoss};
