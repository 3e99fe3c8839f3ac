//! Accuracy-matrix bookkeeping and the continual-learning metrics.
//!
//! `R[i][j]` is the test score on task `i` after training through task
//! `j` (defined for `j >= i`), in percent for classification. Average
//! accuracy reads the final column. Average forgetting comes in two
//! flavors: the standard best-minus-final gap, and the step-accumulated
//! variant that sums incremental drops from one checkpoint to the next —
//! the latter can go negative when later tasks improve earlier ones.

use crate::linalg::Mat;
use crate::nn::{Network, NnError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("accuracy matrix column {0} is incomplete")]
    IncompleteMatrix(usize),
    #[error("forgetting metrics need at least two tasks, got {0}")]
    NeedAtLeastTwoTasks(usize),
    #[error("no baseline activation recorded for reference task {0}")]
    MissingBaseline(usize),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Upper-triangular score matrix, `set`/`get` by (task, trained-through)
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    n: usize,
    values: Vec<Option<f64>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        AccuracyMatrix {
            n: n_tasks,
            values: vec![None; n_tasks * n_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, task: usize, trained_through: usize, score: f64) {
        assert!(task <= trained_through, "lower triangle is undefined");
        assert!(trained_through < self.n);
        self.values[task * self.n + trained_through] = Some(score);
    }

    pub fn get(&self, task: usize, trained_through: usize) -> Option<f64> {
        if task > trained_through || trained_through >= self.n {
            return None;
        }
        self.values[task * self.n + trained_through]
    }

    fn column(&self, j: usize) -> Result<Vec<f64>, MetricsError> {
        (0..=j)
            .map(|i| self.get(i, j).ok_or(MetricsError::IncompleteMatrix(j)))
            .collect()
    }

    fn require_full(&self) -> Result<(), MetricsError> {
        for j in 0..self.n {
            self.column(j)?;
        }
        Ok(())
    }
}

/// Mean of the final column: `(1/N)·Σ_i R[i][N−1]`.
pub fn average_accuracy(r: &AccuracyMatrix) -> Result<f64, MetricsError> {
    let last = r.n - 1;
    let col = r.column(last)?;
    Ok(col.iter().sum::<f64>() / r.n as f64)
}

/// Standard forgetting: mean over non-final tasks of the gap between the
/// best score ever achieved and the final score.
pub fn average_forgetting_standard(r: &AccuracyMatrix) -> Result<f64, MetricsError> {
    if r.n < 2 {
        return Err(MetricsError::NeedAtLeastTwoTasks(r.n));
    }
    r.require_full()?;
    let last = r.n - 1;
    let mut sum = 0.0;
    for i in 0..last {
        let best = (i..r.n)
            .map(|j| r.get(i, j).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best - r.get(i, last).unwrap();
    }
    Ok(sum / (r.n - 1) as f64)
}

/// Step-accumulated forgetting: for each step `t`, the mean drop of all
/// earlier tasks from checkpoint `t−1` to `t`, averaged over steps.
pub fn average_forgetting_coda(r: &AccuracyMatrix) -> Result<f64, MetricsError> {
    if r.n < 2 {
        return Err(MetricsError::NeedAtLeastTwoTasks(r.n));
    }
    r.require_full()?;
    let mut sum = 0.0;
    for t in 1..r.n {
        let mut inner = 0.0;
        for i in 0..t {
            inner += r.get(i, t - 1).unwrap() - r.get(i, t).unwrap();
        }
        sum += inner / t as f64;
    }
    Ok(sum / (r.n - 1) as f64)
}

/// One normalized drift measurement: how far a reference sample's tracked
/// activations at `checkpoint_task` moved from their values at the
/// sample's own task boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRecord {
    pub ref_task: usize,
    pub layer: usize,
    pub checkpoint_task: usize,
    pub drift: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriftTrace {
    pub records: Vec<DriftRecord>,
}

/// Tracks, per reference sample and tracked layer, the L1 change of
/// activations across task checkpoints, normalized by the L1 norm of the
/// baseline activation (recorded at the sample's own checkpoint).
///
/// `checkpoints[t]` is the network state after finishing task `t`;
/// `references` pairs each past task with one input sample.
pub fn drift_probe(
    checkpoints: &[Network],
    references: &[(usize, Vec<f64>)],
    layers: &[usize],
) -> Result<DriftTrace, MetricsError> {
    let mut trace = DriftTrace::default();
    for (ref_task, input) in references {
        if *ref_task >= checkpoints.len() {
            return Err(MetricsError::MissingBaseline(*ref_task));
        }
        let x = Mat::from_vec(1, input.len(), input.clone());
        let base_cache = checkpoints[*ref_task].forward(&x)?;
        for &layer in layers {
            let baseline = base_cache.act(layer).row(0).to_vec();
            let base_norm: f64 = baseline.iter().map(|v| v.abs()).sum();
            for (t, net) in checkpoints.iter().enumerate().skip(*ref_task) {
                let cache = net.forward(&x)?;
                let now = cache.act(layer).row(0);
                let diff: f64 = now
                    .iter()
                    .zip(&baseline)
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                trace.records.push(DriftRecord {
                    ref_task: *ref_task,
                    layer,
                    checkpoint_task: t,
                    drift: if base_norm > 0.0 { diff / base_norm } else { diff },
                });
            }
        }
    }
    Ok(trace)
}

/// `accuracy_matrix.csv`: `task_i,task_j,accuracy` with two decimals.
pub fn accuracy_matrix_csv(r: &AccuracyMatrix) -> String {
    let mut out = String::from("task_i,task_j,accuracy\n");
    for i in 0..r.n {
        for j in i..r.n {
            if let Some(v) = r.get(i, j) {
                out.push_str(&format!("{i},{j},{v:.2}\n"));
            }
        }
    }
    out
}

/// `metrics.csv`: one row per seed, two decimals.
pub fn metrics_csv(rows: &[(u64, f64, f64, f64)]) -> String {
    let mut out = String::from("seed,aa,af_std,af_coda\n");
    for (seed, aa, af_std, af_coda) in rows {
        out.push_str(&format!("{seed},{aa:.2},{af_std:.2},{af_coda:.2}\n"));
    }
    out
}

/// `drift.csv`: `ref_task,layer,checkpoint_task,drift`.
pub fn drift_csv(trace: &DriftTrace) -> String {
    let mut out = String::from("ref_task,layer,checkpoint_task,drift\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.ref_task, r.layer, r.checkpoint_task, r.drift
        ));
    }
    out
}
