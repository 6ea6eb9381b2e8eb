//! Attack evaluation: ROC curves, AUC, TPR at a fixed FPR, balanced accuracy
//! (ASR) and confusion matrices.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn undefined(msg: impl Into<String>) -> Error {
    Error::UndefinedMetric(msg.into())
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    if labels.is_empty() {
        return Err(undefined("no samples"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(undefined("both classes must be present"));
    }
    Ok((pos, neg))
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(undefined("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(undefined("NaN score"));
    }
    class_counts(labels)
}

/// Empirical ROC curve. A sample is predicted positive when its score is at
/// or above the threshold; the first point uses `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    pub fn new(scores: &[f64], labels: &[bool]) -> Result<Self> {
        let (n_pos, n_neg) = check_scores(scores, labels)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
        let mut points = vec![(0.0, 0.0)];
        let mut thresholds = vec![f64::INFINITY];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            let s = scores[order[i]];
            while i < order.len() && scores[order[i]] == s {
                if labels[order[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
            thresholds.push(s);
        }
        Ok(Self { points, thresholds })
    }

    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr,threshold\n");
        for ((f, t), th) in self.points.iter().zip(&self.thresholds) {
            s.push_str(&format!("{f:.17e},{t:.17e},{th:.17e}\n"));
        }
        s
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Computed from midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // twice the rank sum keeps midranks integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j, midrank = (i + 1 + j) / 2
        let mid2 = (i + 1 + j) as u128;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += mid2 * pos_in_tie;
        i = j;
    }
    let np = n_pos as u128;
    // 2 * U = 2 * rank_sum - np (np + 1)
    let u2 = rank2_sum - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Largest TPR over achievable operating points with FPR at most `fpr_level`.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], fpr_level: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr_level) {
        return Err(undefined(format!("fpr level {fpr_level} outside [0, 1]")));
    }
    let curve = RocCurve::new(scores, labels)?;
    Ok(curve
        .points
        .iter()
        .filter(|(f, _)| *f <= fpr_level)
        .map(|&(_, t)| t)
        .fold(0.0, f64::max))
}

/// `k x k` counts, rows indexed by true class.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

/// Attack success rate: mean per-class recall over the classes present.
pub fn asr(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(undefined("predictions and labels must be nonempty and equal length"));
    }
    let k = labels.iter().chain(predictions).max().unwrap() + 1;
    let cm = confusion_matrix(predictions, labels, k);
    let recalls: Vec<f64> = cm
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub task: String,
    pub method: String,
    pub auc: f64,
    pub tpr_at_1pct_fpr: f64,
    pub asr: f64,
    pub confusion: Vec<Vec<usize>>,
    pub n_per_class: Vec<usize>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

/// Binary report. `scores` rank positives high; `predictions` are the
/// attack's hard decisions.
pub fn binary_report(
    task: &str,
    method: &str,
    scores: &[f64],
    labels: &[bool],
    predictions: &[bool],
) -> Result<AttackReport> {
    let auc = roc_auc(scores, labels)?;
    let tpr = tpr_at_fpr(scores, labels, 0.01)?;
    let p: Vec<usize> = predictions.iter().map(|&b| b as usize).collect();
    let l: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let confusion = confusion_matrix(&p, &l, 2);
    let n_per_class = confusion.iter().map(|r| r.iter().sum()).collect();
    Ok(AttackReport {
        task: task.into(),
        method: method.into(),
        auc,
        tpr_at_1pct_fpr: tpr,
        asr: asr(&p, &l)?,
        confusion,
        n_per_class,
        config: serde_json::Value::Null,
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRoc {
    pub class: usize,
    pub auc: f64,
    pub tpr_at_1pct_fpr: f64,
    pub roc: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrReport {
    pub per_class: Vec<ClassRoc>,
    pub summary: AttackReport,
}

/// One-vs-rest evaluation of a multi-class classifier: per class, score by
/// softmax probability; the summary averages AUC and TPR over every class
/// and takes ASR from the argmax predictions.
pub fn one_vs_rest_report(task: &str, method: &str, logits: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<OvrReport> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(undefined("logits and labels must be nonempty and equal length"));
    }
    for c in 0..num_classes {
        if !labels.contains(&c) {
            return Err(undefined(format!("class {c} missing")));
        }
    }
    let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        per_class.push(ClassRoc {
            class: c,
            auc: roc_auc(&scores, &bin)?,
            tpr_at_1pct_fpr: tpr_at_fpr(&scores, &bin, 0.01)?,
            roc: RocCurve::new(&scores, &bin)?,
        });
    }
    let preds: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let confusion = confusion_matrix(&preds, labels, num_classes);
    let k = num_classes as f64;
    let summary = AttackReport {
        task: task.into(),
        method: method.into(),
        auc: per_class.iter().map(|c| c.auc).sum::<f64>() / k,
        tpr_at_1pct_fpr: per_class.iter().map(|c| c.tpr_at_1pct_fpr).sum::<f64>() / k,
        asr: asr(&preds, labels)?,
        n_per_class: confusion.iter().map(|r| r.iter().sum()).collect(),
        confusion,
        config: serde_json::Value::Null,
    };
    Ok(OvrReport { per_class, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAccuracy {
    pub source: String,
    pub is_belonging: bool,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedAccuracyReport {
    pub per_source: Vec<SourceAccuracy>,
    pub overall: f64,
}

/// Per-source accuracy of belonging/non-belonging decisions; the overall
/// figure weights every source equally.
pub fn class_balanced_accuracy(sources: &[(String, bool, Vec<bool>)]) -> Result<BalancedAccuracyReport> {
    if sources.is_empty() {
        return Err(undefined("no sources"));
    }
    let mut per_source = Vec::with_capacity(sources.len());
    for (name, is_belonging, predicted) in sources {
        if predicted.is_empty() {
            return Err(undefined(format!("source {name} is empty")));
        }
        let correct = predicted.iter().filter(|&&p| p == *is_belonging).count();
        per_source.push(SourceAccuracy {
            source: name.clone(),
            is_belonging: *is_belonging,
            n: predicted.len(),
            accuracy: correct as f64 / predicted.len() as f64,
        });
    }
    let overall = per_source.iter().map(|s| s.accuracy).sum::<f64>() / per_source.len() as f64;
    Ok(BalancedAccuracyReport { per_source, overall })
}
