use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};

use super::sigmoid;

/// What a prediction is scored against.
#[derive(Clone, Debug, PartialEq)]
pub enum LossTarget {
    /// Mean cross-entropy of row logits against class ids. A single logit
    /// column is read as the positive-class logit of a binary problem.
    CrossEntropy(Vec<usize>),
    /// Mean squared error over all entries.
    Mse(Mat),
    /// Mean squared error over entries whose mask flag is set (row-major).
    MaskedMse { target: Mat, mask: Vec<bool> },
}

impl LossTarget {
    pub fn masked_mse(target: Mat, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != target.len() {
            return shape_err("mask length differs from target size");
        }
        if !mask.iter().any(|&m| m) {
            return Err(GsanError::EmptyMask);
        }
        Ok(LossTarget::MaskedMse { target, mask })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_classes(pred: &Mat, classes: &[usize]) -> Result<()> {
    if classes.len() != pred.rows() || pred.cols() == 0 {
        return shape_err(format!(
            "{} class labels for {}x{} logits",
            classes.len(),
            pred.rows(),
            pred.cols()
        ));
    }
    let n_classes = pred.cols().max(2);
    if classes.iter().any(|&c| c >= n_classes) {
        return shape_err("class id exceeds the number of logits");
    }
    if classes.is_empty() {
        return Err(GsanError::EmptyMask);
    }
    Ok(())
}

/// Scalar loss value.
pub fn losses(pred: &Mat, target: &LossTarget) -> Result<f64> {
    match target {
        LossTarget::CrossEntropy(classes) => {
            check_classes(pred, classes)?;
            let n = pred.rows() as f64;
            let total: f64 = if pred.cols() == 1 {
                (0..pred.rows())
                    .map(|i| {
                        let z = pred[(i, 0)];
                        softplus(z) - if classes[i] == 1 { z } else { 0.0 }
                    })
                    .sum()
            } else {
                (0..pred.rows())
                    .map(|i| {
                        let row = pred.row(i);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                        lse - row[classes[i]]
                    })
                    .sum()
            };
            Ok(total / n)
        }
        LossTarget::Mse(t) => {
            if t.shape() != pred.shape() {
                return shape_err("mse target shape");
            }
            if pred.is_empty() {
                return Err(GsanError::EmptyMask);
            }
            Ok(pred.sub(t)?.as_slice().iter().map(|d| d * d).sum::<f64>() / pred.len() as f64)
        }
        LossTarget::MaskedMse { target, mask } => {
            if target.shape() != pred.shape() || mask.len() != pred.len() {
                return shape_err("masked mse shapes");
            }
            let count = mask.iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(GsanError::EmptyMask);
            }
            let total: f64 = pred
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|((p, t), _)| (p - t) * (p - t))
                .sum();
            Ok(total / count as f64)
        }
    }
}

/// Gradient of [`losses`] with respect to `pred`.
pub(crate) fn loss_gradient(pred: &Mat, target: &LossTarget) -> Result<Mat> {
    match target {
        LossTarget::CrossEntropy(classes) => {
            check_classes(pred, classes)?;
            let n = pred.rows() as f64;
            let mut g = Mat::zeros(pred.rows(), pred.cols());
            for i in 0..pred.rows() {
                if pred.cols() == 1 {
                    let y = if classes[i] == 1 { 1.0 } else { 0.0 };
                    g[(i, 0)] = (sigmoid(pred[(i, 0)]) - y) / n;
                } else {
                    let row = pred.row(i);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = row.iter().map(|z| (z - m).exp()).sum();
                    for (j, &z) in row.iter().enumerate() {
                        let p = (z - m).exp() / total;
                        g[(i, j)] = (p - if j == classes[i] { 1.0 } else { 0.0 }) / n;
                    }
                }
            }
            Ok(g)
        }
        LossTarget::Mse(t) => {
            let n = pred.len() as f64;
            Ok(pred.sub(t)?.scale(2.0 / n))
        }
        LossTarget::MaskedMse { target, mask } => {
            let count = mask.iter().filter(|&&m| m).count() as f64;
            let d = pred.sub(target)?;
            let data = d
                .as_slice()
                .iter()
                .zip(mask)
                .map(|(x, &m)| if m { 2.0 * x / count } else { 0.0 })
                .collect();
            Mat::from_vec(pred.rows(), pred.cols(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_is_zero() {
        let x = Mat::from_fn(3, 2, |i, j| i as f64 * 0.7 - j as f64);
        assert_eq!(losses(&x, &LossTarget::Mse(x.clone())).unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        for c in [2usize, 3, 7] {
            let z = Mat::filled(4, c, 0.3);
            let l = losses(&z, &LossTarget::CrossEntropy(vec![0, 1, 1, 0])).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
        let z = Mat::zeros(2, 1);
        let l = losses(&z, &LossTarget::CrossEntropy(vec![0, 1])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_with_single_entry() {
        let p = Mat::col_vec(&[1.0, 5.0, -2.0]);
        let t = Mat::col_vec(&[0.0, 2.0, 0.0]);
        let target = LossTarget::masked_mse(t.clone(), vec![false, true, false]).unwrap();
        assert_eq!(losses(&p, &target).unwrap(), 9.0);
        assert_eq!(LossTarget::masked_mse(t, vec![false; 3]), Err(GsanError::EmptyMask));
    }
}
