use alloc::vec::Vec;

use super::TrainError;

/// Area under the ROC curve: the fraction of (positive, negative) pairs
/// ordered correctly, ties counting one half. Runs in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::LabelShapeMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TrainError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with midranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), TrainError> {
    if pred.len() != truth.len() {
        return Err(TrainError::LabelShapeMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, TrainError> {
    check(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num_traits::Float::sqrt(ss / pred.len() as f64))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, TrainError> {
    check(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}
