//! Percentile activation hypercubes.
//!
//! After a task finishes, the activations of each tracked layer are
//! summarized per neuron by their central `p%` range: the `α`- and
//! `(100−α)`-percentiles with `α = (100−p)/2`. Those per-task boxes merge
//! into a cumulative box by elementwise min/max, which only ever expands —
//! the protected region for subsequent tasks.
//!
//! Percentiles use linear interpolation between order statistics (the
//! inclusive convention). Oracle tests must use the same convention.

use crate::interval::Hypercube;
use crate::linalg::Mat;
use crate::nn::{Network, NnError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HypercubeError {
    #[error("no activations to summarize (need at least 2 samples, got {0})")]
    EmptyActivations(usize),
    #[error("non-finite activation at sample {row}, neuron {col}")]
    NonFiniteActivation { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no hypercube recorded for layer {layer} at task {task}")]
    MissingHypercube { layer: usize, task: usize },
    #[error("coverage percentage must satisfy 0 < p <= 100, got {0}")]
    BadCoverage(f64),
    #[error("tracked layer set must not be empty")]
    NoTrackedLayers,
    #[error("hypercube invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("store decode: {0}")]
    Decode(String),
}

/// Which layer outputs to track and how much central mass to cover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypercubeConfig {
    /// Sorted indices of layers whose outputs are summarized.
    pub layer_indices: Vec<usize>,
    /// Central coverage percentage `p`; tails of `α = (100−p)/2` percent
    /// are excluded on each side.
    pub coverage_p: f64,
}

impl HypercubeConfig {
    pub fn new(mut layer_indices: Vec<usize>, coverage_p: f64) -> Result<Self, HypercubeError> {
        if layer_indices.is_empty() {
            return Err(HypercubeError::NoTrackedLayers);
        }
        if !(coverage_p > 0.0 && coverage_p <= 100.0) {
            return Err(HypercubeError::BadCoverage(coverage_p));
        }
        layer_indices.sort_unstable();
        layer_indices.dedup();
        Ok(HypercubeConfig {
            layer_indices,
            coverage_p,
        })
    }

    pub fn alpha(&self) -> f64 {
        (100.0 - self.coverage_p) / 2.0
    }

    /// First tracked layer: it has no tracked predecessor, so the drift
    /// penalty does not apply there — feature distillation covers it.
    pub fn first_layer(&self) -> usize {
        self.layer_indices[0]
    }
}

/// Per-task summary of one tracked layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub hypercube: Hypercube,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub mean_radius: f64,
}

impl TaskSummary {
    fn from_hypercube(h: Hypercube) -> Self {
        TaskSummary {
            center: h.center(),
            radius: h.radius(),
            mean_radius: h.mean_radius(),
            hypercube: h,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct LayerStore {
    per_task: BTreeMap<usize, TaskSummary>,
    cumulative: Option<Hypercube>,
}

/// Per-layer per-task and cumulative hypercubes. Mutated only at task
/// boundaries; training reads an immutable [`TrackerView`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypercubeStore {
    coverage_p: f64,
    layers: BTreeMap<usize, LayerStore>,
}

impl HypercubeStore {
    pub fn new(config: &HypercubeConfig) -> Self {
        HypercubeStore {
            coverage_p: config.coverage_p,
            layers: config
                .layer_indices
                .iter()
                .map(|&l| (l, LayerStore::default()))
                .collect(),
        }
    }

    pub fn coverage_p(&self) -> f64 {
        self.coverage_p
    }

    pub fn tracked_layers(&self) -> Vec<usize> {
        self.layers.keys().copied().collect()
    }

    pub fn cumulative(&self, layer: usize) -> Option<&Hypercube> {
        self.layers.get(&layer)?.cumulative.as_ref()
    }

    pub fn per_task(&self, layer: usize, task: usize) -> Option<&TaskSummary> {
        self.layers.get(&layer)?.per_task.get(&task)
    }

    pub fn latest_task(&self) -> Option<usize> {
        self.layers
            .values()
            .filter_map(|l| l.per_task.keys().max())
            .max()
            .copied()
    }

    /// Records the percentile hypercube of `activations` (N×d, one row
    /// per sample) for `layer` at `task_index` and expands the cumulative
    /// box. Nesting and coverage invariants are checked here; a violation
    /// is an error, not a warning.
    pub fn record_activations(
        &mut self,
        layer: usize,
        task_index: usize,
        activations: &Mat,
    ) -> Result<(), HypercubeError> {
        let alpha = (100.0 - self.coverage_p) / 2.0;
        let cube = compute_task_hypercube(activations, alpha)?;
        check_coverage(activations, &cube, self.coverage_p)?;
        let entry = self
            .layers
            .get_mut(&layer)
            .ok_or(HypercubeError::MissingHypercube { layer, task: task_index })?;
        let merged = match &entry.cumulative {
            None => cube.clone(),
            Some(prev) => prev
                .merge(&cube)
                .map_err(|e| HypercubeError::DimensionMismatch(e.to_string()))?,
        };
        if let Some(prev) = &entry.cumulative {
            if !merged.contains(prev) {
                return Err(HypercubeError::InvariantViolation(format!(
                    "layer {layer}: cumulative box after task {task_index} does not contain its predecessor"
                )));
            }
        }
        if !merged.contains(&cube) {
            return Err(HypercubeError::InvariantViolation(format!(
                "layer {layer}: cumulative box after task {task_index} does not contain the per-task box"
            )));
        }
        entry.cumulative = Some(merged);
        entry.per_task.insert(task_index, TaskSummary::from_hypercube(cube));
        Ok(())
    }

    /// Immutable snapshot of everything training on task `t` needs:
    /// cumulative boxes through `t−1` and the previous task's summaries.
    pub fn view_before_task(&self, t: usize) -> TrackerView {
        let mut cumulative_prev = BTreeMap::new();
        let mut prev_task = BTreeMap::new();
        if t >= 2 {
            for (&layer, ls) in &self.layers {
                if let Some(c) = &ls.cumulative {
                    cumulative_prev.insert(layer, c.clone());
                }
                if let Some(s) = ls.per_task.get(&(t - 1)) {
                    prev_task.insert(layer, s.clone());
                }
            }
        }
        TrackerView {
            cumulative_prev,
            prev_task,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<(), HypercubeError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| HypercubeError::Decode(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, HypercubeError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HypercubeError::Decode(e.to_string()))
    }
}

/// Read-only per-layer boxes for use inside the training loop.
#[derive(Debug, Clone, Default)]
pub struct TrackerView {
    /// Cumulative hypercube through the previous task, per tracked layer.
    pub cumulative_prev: BTreeMap<usize, Hypercube>,
    /// Previous task's per-task summary, per tracked layer.
    pub prev_task: BTreeMap<usize, TaskSummary>,
}

/// Per-neuron `[α, 100−α]` percentile bounds over the rows of
/// `activations`.
pub fn compute_task_hypercube(
    activations: &Mat,
    alpha: f64,
) -> Result<Hypercube, HypercubeError> {
    let n = activations.rows();
    if n < 2 {
        return Err(HypercubeError::EmptyActivations(n));
    }
    for r in 0..n {
        for (c, v) in activations.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(HypercubeError::NonFiniteActivation { row: r, col: c });
            }
        }
    }
    let d = activations.cols();
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    let mut column = vec![0.0; n];
    for j in 0..d {
        for r in 0..n {
            column[r] = activations.get(r, j);
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lo.push(percentile_sorted(&column, alpha));
        hi.push(percentile_sorted(&column, 100.0 - alpha));
    }
    Hypercube::new(lo, hi).map_err(|e| HypercubeError::DimensionMismatch(e.to_string()))
}

/// Linear-interpolation percentile of an ascending slice: rank
/// `h = (n−1)·q/100`, interpolated between the neighboring order
/// statistics. The result is clamped into that bracket — plain lerp can
/// round an ulp outside it, which would let a constant column escape its
/// own bounds.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=100.0).contains(&q));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q / 100.0;
    let idx = h.floor() as usize;
    let frac = h - idx as f64;
    if idx + 1 >= n {
        sorted[n - 1]
    } else {
        let (a, b) = (sorted[idx], sorted[idx + 1]);
        (a + (b - a) * frac).clamp(a, b)
    }
}

/// At least `p%` of each neuron's values must lie inside its bounds,
/// up to the discreteness of `n` samples (two interpolated ranks of
/// slack per side).
fn check_coverage(acts: &Mat, cube: &Hypercube, p: f64) -> Result<(), HypercubeError> {
    let n = acts.rows();
    let min_frac = p / 100.0 - 2.0 / n as f64;
    for j in 0..acts.cols() {
        let (lo, hi) = (cube.lo()[j], cube.hi()[j]);
        let inside = (0..n)
            .filter(|&r| {
                let v = acts.get(r, j);
                lo <= v && v <= hi
            })
            .count();
        let frac = inside as f64 / n as f64;
        if frac < min_frac {
            let sample: Vec<f64> = (0..n.min(5)).map(|r| acts.get(r, j)).collect();
            return Err(HypercubeError::InvariantViolation(format!(
                "neuron {j}: only {:.2}% of values inside [{lo}, {hi}], need {:.2}% (first values: {sample:?})",
                100.0 * frac,
                100.0 * min_frac
            )));
        }
    }
    Ok(())
}

/// End-of-task hypercube refresh: forwards the full task dataset through
/// `net` in batches, then records percentile boxes for every tracked
/// layer. Runs only after training for the task has finished, so the
/// boxes reflect settled activations.
pub fn end_of_task_update(
    store: &mut HypercubeStore,
    net: &Network,
    inputs: &Mat,
    task_index: usize,
    batch_size: usize,
) -> Result<(), HypercubeError> {
    let layers = store.tracked_layers();
    let n = inputs.rows();
    if n == 0 {
        return Err(HypercubeError::EmptyActivations(0));
    }
    let mut collected: BTreeMap<usize, Vec<f64>> = layers.iter().map(|&l| (l, Vec::new())).collect();
    let mut widths: BTreeMap<usize, usize> = BTreeMap::new();
    let bs = batch_size.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + bs).min(n);
        let mut chunk = Mat::zeros(end - start, inputs.cols());
        for (i, r) in (start..end).enumerate() {
            chunk.row_mut(i).copy_from_slice(inputs.row(r));
        }
        let cache = net.forward(&chunk)?;
        for &l in &layers {
            let act = cache.act(l);
            widths.insert(l, act.cols());
            collected.get_mut(&l).unwrap().extend_from_slice(act.as_slice());
        }
        start = end;
    }
    for &l in &layers {
        let d = widths[&l];
        let acts = Mat::from_vec(n, d, collected.remove(&l).unwrap());
        store.record_activations(l, task_index, &acts)?;
    }
    Ok(())
}
