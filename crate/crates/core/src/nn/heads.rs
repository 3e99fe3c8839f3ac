//! Loss heads: softmax cross-entropy with optional class masking, and
//! mean squared error. Each returns the batch-mean scalar and the exact
//! gradient with respect to the network output.

use crate::linalg::Mat;
use crate::nn::NnError;

/// Batch-mean cross-entropy over the softmax of `logits`.
///
/// `active`, when given, restricts the softmax to a subset of classes:
/// inactive logits contribute neither probability mass nor gradient. This
/// is the expanding-head convention for class-incremental streams — units
/// for classes not yet seen behave as if they did not exist.
pub fn softmax_cross_entropy(
    logits: &Mat,
    labels: &[usize],
    active: Option<&[bool]>,
) -> Result<(f64, Mat), NnError> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(NnError::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(a) = active {
        if a.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "active mask has {} entries for {} classes",
                a.len(),
                c
            )));
        }
    }
    let is_active = |k: usize| active.map_or(true, |a| a[k]);
    let mut loss = 0.0;
    let mut grad = Mat::zeros(n, c);
    for i in 0..n {
        let row = logits.row(i);
        let y = labels[i];
        if y >= c || !is_active(y) {
            return Err(NnError::ShapeMismatch(format!(
                "label {y} outside the active class set"
            )));
        }
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            if is_active(k) && row[k] > m {
                m = row[k];
            }
        }
        let mut z = 0.0;
        for k in 0..c {
            if is_active(k) {
                z += (row[k] - m).exp();
            }
        }
        let lse = m + z.ln();
        loss += lse - row[y];
        let grow = grad.row_mut(i);
        for k in 0..c {
            if is_active(k) {
                let p = (row[k] - lse).exp();
                grow[k] = (p - if k == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
    }
    Ok((loss / n as f64, grad))
}

/// Batch-mean squared L2 error: `(1/N)·Σ_i ‖pred_i − target_i‖²`.
pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat), NnError> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(NnError::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = pred.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(pred.rows(), pred.cols());
    for ((g, p), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Percent of rows whose active-class argmax equals the label.
pub fn accuracy_percent(logits: &Mat, labels: &[usize], active: Option<&[bool]>) -> f64 {
    let is_active = |k: usize| active.map_or(true, |a| a[k]);
    let mut correct = 0usize;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let mut best = usize::MAX;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..logits.cols() {
            if is_active(k) && row[k] > best_v {
                best_v = row[k];
                best = k;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    100.0 * correct as f64 / logits.rows() as f64
}
