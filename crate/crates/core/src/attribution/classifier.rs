use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::features::{NormStats, TrajectoryFeatureVector};
use crate::metrics::argmax;
use crate::optim::{adamw_step, AdamWHyper, AdamWState, TrainConfig};
use crate::rng;

/// Spec hash used for classifiers over raw data coordinates.
pub const RAW_DATA_HASH: &str = "raw-data";

/// `logits = W * normalize(f) + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub norm_stats: NormStats,
    pub spec_hash: String,
    pub task: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

impl LinearClassifier {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.norm_stats.dim()
    }

    /// Logits of an already normalized vector.
    pub fn logits_normalized(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn logits_raw(&self, values: &[f64]) -> Result<Vec<f64>> {
        let z = self.norm_stats.apply_values(values)?;
        Ok(self.logits_normalized(&z))
    }

    pub fn predict_logits(&self, f: &TrajectoryFeatureVector) -> Result<Vec<f64>> {
        if f.spec_hash != self.spec_hash {
            return contract(format!(
                "feature spec hash {} does not match classifier ({})",
                f.spec_hash, self.spec_hash
            ));
        }
        self.logits_raw(&f.values)
    }

    pub fn predict(&self, f: &TrajectoryFeatureVector) -> Result<usize> {
        Ok(argmax(&self.predict_logits(f)?))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        crate::checkpoint::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let clf: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        let k = clf.bias.len();
        let d = clf.norm_stats.dim();
        if k < 2 || clf.weights.len() != k || clf.weights.iter().any(|r| r.len() != d) {
            return Err(crate::error::Error::Format("classifier shapes are inconsistent".into()));
        }
        if clf.weights.iter().flatten().chain(&clf.bias).any(|v| !v.is_finite()) {
            return Err(crate::error::Error::Format("classifier has non-finite entries".into()));
        }
        Ok(clf)
    }
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// `softmax - onehot`.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[label] - m);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Epoch order that visits every class equally often: each class's shuffled
/// index list is cycled to the size of the largest class, then the lists are
/// interleaved.
fn balanced_order(by_class: &[Vec<usize>], rng: &mut impl rand::Rng) -> Vec<usize> {
    let m = by_class.iter().map(|c| c.len()).max().unwrap_or(0);
    let shuffled: Vec<Vec<usize>> = by_class
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.shuffle(rng);
            c
        })
        .collect();
    let mut out = Vec::with_capacity(m * by_class.len());
    for i in 0..m {
        for c in &shuffled {
            out.push(c[i % c.len()]);
        }
    }
    out
}

/// Trains a linear softmax classifier with AdamW and a step schedule.
/// Normalization statistics are fit on the training features first.
pub fn train_linear(
    features: &[TrajectoryFeatureVector],
    labels: &[usize],
    num_classes: usize,
    task: &str,
    cfg: &TrainConfig,
) -> Result<(LinearClassifier, Vec<ClassifierEpoch>)> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return contract("features and labels differ in length");
    }
    if labels.iter().any(|&l| l >= num_classes) {
        return contract("label out of range");
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if by_class.iter().filter(|c| !c.is_empty()).count() < 2 {
        return contract("training set must contain at least two classes");
    }
    if num_classes < 2 || by_class.iter().any(|c| c.is_empty()) {
        return contract("every class of the task must be present in training data");
    }
    let norm_stats = NormStats::fit(features)?;
    let rows: Vec<Vec<f64>> = features
        .iter()
        .map(|f| norm_stats.apply_values(&f.values))
        .collect::<Result<_>>()?;
    let d = norm_stats.dim();
    let k = num_classes;
    // flat layout: W row-major then b
    let mut theta = vec![0.0; k * d + k];
    let mut state = AdamWState::new(theta.len(), AdamWHyper::new(cfg.lr, cfg.weight_decay));
    let mut shuffle = rng::keyed(cfg.seed, &[rng::domain::CLASSIFIER]);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut logits = vec![0.0; k];

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        state.hyper.lr = lr;
        let order = balanced_order(&by_class, &mut shuffle);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; theta.len()];
            for &i in batch {
                let x = &rows[i];
                for c in 0..k {
                    let w = &theta[c * d..(c + 1) * d];
                    logits[c] = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + theta[k * d + c];
                }
                let (loss, g) = softmax_xent(&logits, labels[i]);
                loss_sum += loss;
                for c in 0..k {
                    let gc = g[c];
                    for (acc, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *acc += gc * xi;
                    }
                    grad[k * d + c] += gc;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adamw_step(&mut theta, &grad, &mut state)?;
        }
        history.push(ClassifierEpoch {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            lr,
        });
    }
    let weights = (0..k).map(|c| theta[c * d..(c + 1) * d].to_vec()).collect();
    let bias = theta[k * d..].to_vec();
    Ok((
        LinearClassifier {
            weights,
            bias,
            norm_stats,
            spec_hash: features[0].spec_hash.clone(),
            task: task.to_string(),
            config: cfg.clone(),
        },
        history,
    ))
}

/// Wraps raw data coordinates as feature vectors for the model-blind
/// baseline.
pub fn raw_vectors(samples: &[(u64, Vec<f64>)]) -> Vec<TrajectoryFeatureVector> {
    samples
        .iter()
        .map(|(id, x)| TrajectoryFeatureVector {
            sample_id: *id,
            label: String::new(),
            values: x.clone(),
            spec_hash: RAW_DATA_HASH.to_string(),
        })
        .collect()
}

/// The same recipe applied to raw data coordinates; never queries the model.
pub fn model_blind_baseline(
    samples: &[(u64, Vec<f64>)],
    labels: &[usize],
    num_classes: usize,
    task: &str,
    cfg: &TrainConfig,
) -> Result<LinearClassifier> {
    let features = raw_vectors(samples);
    Ok(train_linear(&features, labels, num_classes, task, cfg)?.0)
}
