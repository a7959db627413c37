use serde::{Deserialize, Serialize};

use super::P2Error;
use crate::stats::{mean, std_dev};

/// Area under the ROC curve via the rank-sum statistic; tied scores
/// contribute one half. `labels[i] == true` is the positive class.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, P2Error> {
    if scores.len() != labels.len() {
        return Err(P2Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(P2Error::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(P2Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tie groups; doubled to stay integral.
    let mut rank_sum_x2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled_rank = (start + 1 + end) as u128;
        for &idx in &order[start..end] {
            if labels[idx] {
                rank_sum_x2 += doubled_rank;
            }
        }
        start = end;
    }
    let n_pos_u = n_pos as u128;
    let u_x2 = rank_sum_x2 - n_pos_u * (n_pos_u + 1);
    Ok(u_x2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
}

impl FoldMetrics {
    /// Hard predictions are `score > 0`. Precision and F1 read 0 when nothing is
    /// predicted positive.
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self, P2Error> {
        let auc = roc_auc(scores, labels)?;
        let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s > 0.0, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fneg += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            accuracy: ratio(tp + tn, scores.len()),
            precision,
            recall,
            f1,
            roc_auc: auc,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: std_dev(values),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} (± {:.2})", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldMetrics>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub roc_auc: MeanStd,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Self {
        let col = |f: fn(&FoldMetrics) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            accuracy: col(|m| m.accuracy),
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
            roc_auc: col(|m| m.roc_auc),
            folds,
        }
    }

    pub const COLUMNS: [&'static str; 5] = ["Accuracy", "Precision", "Recall", "F1-score", "ROC AUC"];

    /// Cells in `COLUMNS` order, formatted as `0.50 (± 0.03)`.
    pub fn formatted_row(&self) -> [String; 5] {
        [
            self.accuracy.to_string(),
            self.precision.to_string(),
            self.recall.to_string(),
            self.f1.to_string(),
            self.roc_auc.to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_fixture() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn auc_extremes_and_errors() {
        assert_eq!(roc_auc(&[0.0, 1.0, 2.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[3.0, 1.0, 2.0], &[false, true, true]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[1.0, 2.0], &[true, true]), Err(P2Error::SingleClass)));
        assert!(matches!(roc_auc(&[f64::NAN, 2.0], &[true, false]), Err(P2Error::NonFinite)));
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn fold_metrics_counts() {
        // tp=1 fp=1 tn=1 fn=1
        let m = FoldMetrics::from_scores(&[1.0, 1.0, -1.0, -1.0], &[true, false, false, true]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.5, 0.5, 0.5, 0.5));
        let none = FoldMetrics::from_scores(&[-1.0, -2.0], &[true, false]).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mean_std_formatting() {
        let ms = MeanStd::of(&[0.47, 0.53]);
        assert_eq!(ms.to_string(), "0.50 (± 0.03)");
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=50).prop_flat_map(|n| {
            (
                // Small integer grid makes ties common.
                prop::collection::vec((0i32..8).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_oracle((scores, mut labels) in scored_labels()) {
            labels[0] = true;
            labels[1] = false;
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_force_auc(&scores, &labels));
        }

        #[test]
        fn negated_scores_complement(perm in Just(()).prop_perturb(|_, mut rng| {
            let n = 2 + (rng.next_u32() % 40) as usize;
            let scores: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.next_u32() % 2 == 0).collect();
            labels[0] = true;
            labels[n - 1] = false;
            (scores, labels)
        })) {
            let (scores, labels) = perm;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
