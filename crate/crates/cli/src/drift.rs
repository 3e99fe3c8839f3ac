//! Activation-drift probing across task checkpoints.
//!
//! For each task's first test sample, tracks how much the tracked-layer
//! activations move (normalized L1) from the values recorded at that
//! task's own boundary, across all later boundaries. Reuses run
//! artifacts when present; trains the run first otherwise.

use crate::config::ExperimentConfig;
use crate::runner::{load_stream, run_single, RunnerError};
use intact_core::hypercube::HypercubeStore;
use intact_core::metrics::{drift_csv, drift_probe, DriftTrace};
use intact_core::nn::load_network;
use std::fs;
use std::path::PathBuf;

/// Runs (or reuses) every seed of the config and writes a per-seed
/// `drift.csv`. Returns the CSV paths alongside the traces.
pub fn run_drift(cfg: &ExperimentConfig) -> Result<Vec<(PathBuf, DriftTrace)>, RunnerError> {
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run_dir = cfg.run_dir(seed);
        let complete = crate::runner::RunRecord::load(&run_dir.join("run.json"))
            .map(|r| r.tasks_done >= cfg.n_tasks)
            .unwrap_or(false);
        if !complete {
            run_single(cfg, seed)?;
        }
        let trace = probe_run(cfg, seed)?;
        let path = run_dir.join("drift.csv");
        fs::write(&path, drift_csv(&trace))?;
        out.push((path, trace));
    }
    Ok(out)
}

fn probe_run(cfg: &ExperimentConfig, seed: u64) -> Result<DriftTrace, RunnerError> {
    let run_dir = cfg.run_dir(seed);
    let stream = load_stream(cfg, seed)?;
    let mut checkpoints = Vec::with_capacity(cfg.n_tasks);
    for t in 1..=cfg.n_tasks {
        let (net, _) = load_network(&run_dir.join(format!("checkpoint_task_{t}.bin")))?;
        checkpoints.push(net);
    }
    let store =
        HypercubeStore::load_json(&run_dir.join(format!("hypercubes_task_{}.json", cfg.n_tasks)))?;
    let layers = store.tracked_layers();
    let references: Vec<(usize, Vec<f64>)> = stream
        .tasks
        .iter()
        .enumerate()
        .map(|(i, task)| (i, task.test.inputs.row(0).to_vec()))
        .collect();
    Ok(drift_probe(&checkpoints, &references, &layers)?)
}
