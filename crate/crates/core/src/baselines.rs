//! Comparison methods.
//!
//! Naive fine-tuning is not a separate implementation — it is the exact
//! λ→0 limit of the consolidated trainer, which skips every zero-weight
//! term. Elastic weight consolidation ships here as the anchor
//! regularization baseline: a diagonal-Fisher quadratic penalty pulling
//! parameters toward the previous task's optimum.

use crate::linalg::Mat;
use crate::nn::{softmax_cross_entropy, Gradients, Network, NnError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no Fisher information available; estimate it after a task first")]
    MissingFisher,
    #[error("cannot estimate Fisher information from an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Diagonal empirical Fisher information with its anchor parameters, both
/// in the flat trainable-parameter order of the network.
///
/// Accumulation across tasks is a running sum of Fisher values with a
/// single anchor refreshed to the latest task's parameters.
#[derive(Debug, Clone)]
pub struct FisherDiagonal {
    values: Vec<f64>,
    anchor: Vec<f64>,
    tasks_seen: usize,
}

impl FisherDiagonal {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn tasks_seen(&self) -> usize {
        self.tasks_seen
    }

    /// Folds a newer estimate in: Fisher values add, the anchor moves to
    /// the new parameters.
    pub fn accumulate(&mut self, newer: FisherDiagonal) {
        assert_eq!(self.values.len(), newer.values.len());
        for (v, n) in self.values.iter_mut().zip(&newer.values) {
            *v += n;
        }
        self.anchor = newer.anchor;
        self.tasks_seen += newer.tasks_seen;
    }
}

/// Empirical diagonal Fisher: the per-parameter mean of squared gradients
/// of the negative log-likelihood of the observed label, over up to
/// `n_samples` rows of the dataset.
pub fn fisher_estimate(
    net: &Network,
    inputs: &Mat,
    labels: &[usize],
    active: Option<&[bool]>,
    n_samples: usize,
) -> Result<FisherDiagonal, BaselineError> {
    let n = inputs.rows().min(labels.len()).min(n_samples);
    if n == 0 {
        return Err(BaselineError::EmptyDataset);
    }
    let mut acc = vec![0.0; net.num_params()];
    let mut row = Mat::zeros(1, inputs.cols());
    for i in 0..n {
        row.row_mut(0).copy_from_slice(inputs.row(i));
        let cache = net.forward(&row)?;
        let (_, head) = softmax_cross_entropy(cache.output(), &labels[i..i + 1], active)?;
        let grads = net.backward(&cache, &head, &[])?;
        for (a, g) in acc.iter_mut().zip(grads.to_flat()) {
            *a += g * g;
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(FisherDiagonal {
        values: acc,
        anchor: net.params_flat(),
        tasks_seen: 1,
    })
}

/// `λ/2 · Σ_k F_k (θ_k − θ*_k)²` with exact gradients `λ·F_k(θ_k − θ*_k)`.
pub fn ewc_penalty(
    net: &Network,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<(f64, Gradients), BaselineError> {
    let theta = net.params_flat();
    if theta.len() != fisher.values.len() {
        return Err(BaselineError::MissingFisher);
    }
    let mut penalty = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for k in 0..theta.len() {
        let d = theta[k] - fisher.anchor[k];
        penalty += fisher.values[k] * d * d;
        grad[k] = lambda * fisher.values[k] * d;
    }
    Ok((
        0.5 * lambda * penalty,
        Gradients::from_flat(net, &grad),
    ))
}
