use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::metrics::roc_auc;

/// Single-step loss threshold rule `member iff L_{t*} < tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAttack {
    pub t_star: usize,
    pub tau: f64,
    pub uses_pia: bool,
    /// Balanced accuracy on the calibration split.
    pub calibration_accuracy: f64,
}

/// How the calibration picks `t*`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationObjective {
    /// Maximize balanced accuracy jointly over `(t, tau)`.
    #[default]
    BalancedAccuracy,
    /// Pick `t` by AUC of `-L_t`, then `tau` by balanced accuracy.
    Auc,
}

/// Best midpoint threshold for one column. Returns `(tau, balanced accuracy)`,
/// preferring the smaller `tau` on ties.
fn best_tau(member: &[f64], nonmember: &[f64]) -> (f64, f64) {
    let mut all: Vec<(f64, bool)> = member
        .iter()
        .map(|&v| (v, true))
        .chain(nonmember.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (member.len() as f64, nonmember.len() as f64);
    let mut best = (all[0].0, 0.5);
    let mut found = false;
    // members strictly below tau count as detected, nonmembers at or above it as rejected
    let (mut below_m, mut below_n) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                below_m += 1;
            } else {
                below_n += 1;
            }
            i += 1;
        }
        if i == all.len() {
            break;
        }
        let tau = 0.5 * (v + all[i].0);
        let ba = 0.5 * (below_m as f64 / nm + (nn - below_n as f64) / nn);
        if !found || ba > best.1 {
            best = (tau, ba);
            found = true;
        }
    }
    best
}

/// Grid search over `candidate_ts` (columns of the feature rows). Ties go to
/// the smaller step, then the smaller threshold.
pub fn calibrate_threshold_attack(
    member: &[Vec<f64>],
    nonmember: &[Vec<f64>],
    candidate_ts: &[usize],
    uses_pia: bool,
) -> Result<ThresholdAttack> {
    calibrate_with(member, nonmember, candidate_ts, uses_pia, CalibrationObjective::BalancedAccuracy)
}

pub fn calibrate_with(
    member: &[Vec<f64>],
    nonmember: &[Vec<f64>],
    candidate_ts: &[usize],
    uses_pia: bool,
    objective: CalibrationObjective,
) -> Result<ThresholdAttack> {
    if member.is_empty() || nonmember.is_empty() || candidate_ts.is_empty() {
        return contract("calibration needs members, nonmembers and at least one step");
    }
    let k = candidate_ts.len();
    if member.iter().chain(nonmember).any(|r| r.len() != k) {
        return contract(format!("calibration rows must have {k} columns"));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&j| candidate_ts[j]);
    let column = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();

    let mut best: Option<(usize, f64, f64, f64)> = None; // (t, tau, ba, auc)
    for &j in &order {
        let m = column(member, j);
        let n = column(nonmember, j);
        let (tau, ba) = best_tau(&m, &n);
        let key = match objective {
            CalibrationObjective::BalancedAccuracy => ba,
            CalibrationObjective::Auc => {
                let scores: Vec<f64> = m.iter().chain(&n).map(|v| -v).collect();
                let labels: Vec<bool> = (0..m.len() + n.len()).map(|i| i < m.len()).collect();
                roc_auc(&scores, &labels)?
            }
        };
        if best.map_or(true, |b| key > b.3) {
            best = Some((candidate_ts[j], tau, ba, key));
        }
    }
    let (t_star, tau, calibration_accuracy, _) = best.expect("nonempty grid");
    Ok(ThresholdAttack { t_star, tau, uses_pia, calibration_accuracy })
}

/// `1[L_{t*} < tau]` given the per-step values of one sample.
pub fn threshold_decide(attack: &ThresholdAttack, steps: &[usize], values: &[f64]) -> Result<bool> {
    match steps.iter().position(|&t| t == attack.t_star) {
        Some(j) if j < values.len() => Ok(values[j] < attack.tau),
        _ => contract(format!("step {} missing from per-step values", attack.t_star)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn midpoint_hand_example() {
        let a = calibrate_threshold_attack(&col(&[0.1, 0.2]), &col(&[0.3, 0.4]), &[7], false).unwrap();
        assert_eq!(a.t_star, 7);
        assert!((a.tau - 0.25).abs() < 1e-15);
        assert_eq!(a.calibration_accuracy, 1.0);
    }

    #[test]
    fn inverted_sets_fail() {
        let a = calibrate_threshold_attack(&col(&[0.3, 0.4]), &col(&[0.1, 0.2]), &[0], false).unwrap();
        assert!(a.calibration_accuracy <= 0.5);
    }

    #[test]
    fn tie_break_prefers_smaller_step() {
        let m = vec![vec![0.1, 0.1], vec![0.2, 0.2]];
        let n = vec![vec![0.3, 0.3], vec![0.4, 0.4]];
        let a = calibrate_threshold_attack(&m, &n, &[9, 4], false).unwrap();
        assert_eq!(a.t_star, 4);
    }

    #[test]
    fn auc_objective_picks_informative_step() {
        let m = vec![vec![0.5, 0.1], vec![0.5, 0.2]];
        let n = vec![vec![0.5, 0.3], vec![0.5, 0.4]];
        let a = calibrate_with(&m, &n, &[0, 1], false, CalibrationObjective::Auc).unwrap();
        assert_eq!(a.t_star, 1);
    }

    #[test]
    fn decide_is_strict() {
        let a = ThresholdAttack { t_star: 3, tau: 0.5, uses_pia: true, calibration_accuracy: 1.0 };
        assert!(!threshold_decide(&a, &[1, 3], &[0.0, 0.5]).unwrap());
        assert!(threshold_decide(&a, &[1, 3], &[9.0, 0.5 - 1e-12]).unwrap());
        assert!(threshold_decide(&a, &[1, 2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn constant_column_is_uninformative() {
        let a = calibrate_threshold_attack(&col(&[1.0, 1.0]), &col(&[1.0]), &[0], false).unwrap();
        assert_eq!(a.calibration_accuracy, 0.5);
    }
}
