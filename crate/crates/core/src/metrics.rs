//! Evaluation metrics.

use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};

/// Fraction of rows whose arg-max column equals the label. A single-column
/// input is read as one logit per row (positive means class 1).
pub fn accuracy(logits: &Mat, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return shape_err("one logit row per label expected");
    }
    if labels.is_empty() {
        return shape_err("no labels");
    }
    let correct = (0..logits.rows())
        .filter(|&i| predicted_class(logits.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn predicted_class(row: &[f64]) -> usize {
    if row.len() == 1 {
        return usize::from(row[0] > 0.0);
    }
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// Area under the ROC curve from average ranks (ties get their mean rank).
pub fn rank_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return shape_err("one score per label expected");
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return shape_err("both classes are needed for an AUC");
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return shape_err("non-finite score");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Fraction of the selected entries whose prediction lies within `±5%` of the truth.
pub fn within_five_percent(pred: &[f64], truth: &[f64], selected: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return shape_err("prediction and truth differ in length");
    }
    if selected.is_empty() {
        return Err(GsanError::EmptyMask);
    }
    let mut hit = 0;
    for &i in selected {
        let t = *truth.get(i).ok_or_else(|| GsanError::ShapeError(format!("entry {i} out of range")))?;
        if (pred[i] - t).abs() <= 0.05 * t.abs() {
            hit += 1;
        }
    }
    Ok(hit as f64 / selected.len() as f64)
}
