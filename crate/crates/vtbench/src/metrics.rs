//! Split metrics: accuracy, macro-F1, and one-vs-rest AUC.

use serde::{Deserialize, Serialize};

/// Metrics for one evaluation split, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: f64,
}

/// Computes metrics from per-sample class probabilities.
/// `probs` is row-major `[n][C]`; predictions are the row argmax.
///
/// Macro-F1 averages per-class F1 with 0 substituted for undefined classes.
/// AUC is the rank statistic (average ranks on ties): standard binary AUC
/// of class 1 for C = 2, the unweighted one-vs-rest mean over classes with
/// both positives and negatives otherwise.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Metrics {
    assert_eq!(probs.len(), labels.len());
    let n = labels.len();
    let preds: Vec<usize> = probs.iter().map(|row| argmax(row)).collect();

    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / n as f64;

    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == c && **l == c)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == c && **l != c)
            .count() as f64;
        let fneg = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p != c && **l == c)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
    }
    let macro_f1 = f1_sum / n_classes as f64;

    let auc = if n_classes == 2 {
        binary_auc(&scores_for_class(probs, 1), labels, 1).unwrap_or(0.5)
    } else {
        let mut sum = 0.0;
        let mut counted = 0usize;
        for c in 0..n_classes {
            if let Some(a) = binary_auc(&scores_for_class(probs, c), labels, c) {
                sum += a;
                counted += 1;
            }
        }
        if counted > 0 {
            sum / counted as f64
        } else {
            0.5
        }
    };

    Metrics {
        accuracy,
        macro_f1,
        auc,
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn scores_for_class(probs: &[Vec<f64>], c: usize) -> Vec<f64> {
    probs.iter().map(|row| row[c]).collect()
}

/// Mann-Whitney AUC with average ranks for tied scores. `None` when the
/// split lacks positives or negatives for the class.
fn binary_auc(scores: &[f64], labels: &[usize], positive: usize) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l == positive).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = (0..n)
        .filter(|&i| labels[i] == positive)
        .map(|i| ranks[i])
        .sum();
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(pred: usize, c: usize) -> Vec<f64> {
        let mut row = vec![0.0; c];
        row[pred] = 1.0;
        row
    }

    #[test]
    fn all_correct_is_perfect() {
        let labels = [0usize, 1, 2, 1];
        let probs: Vec<Vec<f64>> = labels.iter().map(|&l| one_hot(l, 3)).collect();
        let m = compute_metrics(&probs, &labels, 3);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.auc, 1.0);
    }

    #[test]
    fn hand_computed_binary_confusion() {
        // preds (1,1,0,0) vs truth (1,0,0,1): acc 0.5, per-class F1 both 0.5
        let labels = [1usize, 0, 0, 1];
        let preds = [1usize, 1, 0, 0];
        let probs: Vec<Vec<f64>> = preds.iter().map(|&p| one_hot(p, 2)).collect();
        let m = compute_metrics(&probs, &labels, 2);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn undefined_class_f1_counts_as_zero() {
        // class 2 never predicted and never true: F1 = 0 contributes to mean
        let labels = [0usize, 1, 0, 1];
        let probs: Vec<Vec<f64>> = labels.iter().map(|&l| one_hot(l, 3)).collect();
        let m = compute_metrics(&probs, &labels, 3);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_scores_give_half_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let p: f64 = rng.gen();
                vec![1.0 - p, p]
            })
            .collect();
        let m = compute_metrics(&probs, &labels, 2);
        assert!((m.auc - 0.5).abs() < 0.02, "auc {}", m.auc);
    }

    #[test]
    fn tied_scores_get_average_ranks() {
        // constant scores: AUC exactly 0.5 by the average-rank rule
        let labels = [0usize, 1, 0, 1, 1];
        let probs: Vec<Vec<f64>> = labels.iter().map(|_| vec![0.5, 0.5]).collect();
        let m = compute_metrics(&probs, &labels, 2);
        assert_eq!(m.auc, 0.5);
    }
}
