//! The experiment runner: per-task training with the composite loss,
//! boundary bookkeeping (snapshot, hypercube refresh, Fisher update,
//! evaluation), artifact persistence, and resume.
//!
//! Task indices are 0-based in code; checkpoint and store filenames use
//! 1-based boundary numbers (`checkpoint_task_3.bin` is the state after
//! finishing the third task).
//!
//! Determinism contract: a run is a single logical thread; every random
//! draw comes from an RNG derived from `(seed, purpose, indices)`, so any
//! task boundary is a clean resume point and identical `(config, seed)`
//! runs produce byte-identical metrics.

use crate::config::{ConfigError, DatasetKind, ExperimentConfig, MaskPolicy, Method};
use intact_core::baselines::{ewc_penalty, fisher_estimate, BaselineError, FisherDiagonal};
use intact_core::data::{
    gaussian_toy_stream, load_idx_dir, make_split_stream, DataError, TaskStream,
};
use intact_core::hypercube::{
    end_of_task_update, HypercubeConfig, HypercubeError, HypercubeStore,
};
use intact_core::metrics::{
    accuracy_matrix_csv, average_accuracy, average_forgetting_coda,
    average_forgetting_standard, metrics_csv, AccuracyMatrix, MetricsError,
};
use intact_core::nn::{
    accuracy_percent, load_network, mse_loss, save_network, softmax_cross_entropy, Network,
    NnError, Optimizer, ParamSnapshot,
};
use intact_core::regularizers::{
    align_loss, feat_distill_loss, int_drift_loss, var_loss, FeatureMask, RegularizerError,
};
use intact_core::Mat;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data missing: {0}")]
    DataMissing(String),
    #[error("loss diverged to a non-finite value at task {task}, epoch {epoch}, batch {batch}")]
    NumericalDivergence {
        task: usize,
        epoch: usize,
        batch: usize,
    },
    #[error("resume: {0}")]
    BadResume(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Hypercube(#[from] HypercubeError),
    #[error(transparent)]
    Regularizer(#[from] RegularizerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record encode/decode: {0}")]
    Record(String),
}

/// Everything a finished (or partially finished) run leaves behind,
/// persisted as `run.json` after every task boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_name: String,
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    /// `accuracy_percent` for classification, `mse` for regression.
    pub score_kind: String,
    pub tasks_done: usize,
    pub n_tasks: usize,
    /// `columns[j][i]` = score on task `i` after training through task
    /// `j` (`i <= j`).
    pub columns: Vec<Vec<f64>>,
    pub task_wall_time_s: Vec<f64>,
    /// Names of loss terms evaluated at least once per task.
    pub loss_terms_per_task: Vec<Vec<String>>,
    /// Hypercube records that passed nesting + coverage checks.
    pub hypercube_invariant_checks: usize,
    pub aa: Option<f64>,
    pub af_std: Option<f64>,
    pub af_coda: Option<f64>,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn accuracy_matrix(&self) -> AccuracyMatrix {
        let mut r = AccuracyMatrix::new(self.n_tasks);
        for (j, col) in self.columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                r.set(i, j, v);
            }
        }
        r
    }

    pub fn save(&self, path: &Path) -> Result<(), RunnerError> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| RunnerError::Record(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RunnerError::Record(e.to_string()))
    }
}

/// RNG derived from the run seed and a purpose string, so draws are
/// independent across uses and reproducible from any task boundary.
fn derive_rng(seed: u64, purpose: &str) -> rand::rngs::StdRng {
    use rand::SeedableRng;
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(purpose.as_bytes());
    rand::rngs::StdRng::seed_from_u64(crate::config::fnv1a_hash(&bytes))
}

/// Builds the task stream for a config and run seed.
pub fn load_stream(cfg: &ExperimentConfig, seed: u64) -> Result<TaskStream, RunnerError> {
    match cfg.dataset {
        DatasetKind::Gaussian => Ok(gaussian_toy_stream(
            cfg.n_tasks,
            cfg.gaussian_points_per_task,
            cfg.gaussian_noise_sd,
            seed,
        )),
        DatasetKind::Mnist | DatasetKind::Fmnist => {
            let dir = cfg.dataset_dir();
            let ((ti, tl), (vi, vl)) = load_idx_dir(&dir).map_err(|e| match e {
                DataError::Io(_) => RunnerError::DataMissing(format!(
                    "no IDX dataset at {} (expected {{train,test}}-{{images,labels}}.idx; \
                     drop files there or generate a surrogate with `intact gen-data`): {e}",
                    dir.display()
                )),
                other => RunnerError::Data(other),
            })?;
            Ok(make_split_stream(
                (&ti, &tl),
                (&vi, &vl),
                cfg.scenario,
                cfg.n_tasks,
                seed,
            )?)
        }
    }
}

struct RunState {
    net: Network,
    store: HypercubeStore,
    tracked: Vec<usize>,
    snapshot: Option<ParamSnapshot>,
    fisher: Option<FisherDiagonal>,
    mask: Option<FeatureMask>,
    tasks_done: usize,
}

fn init_state(
    cfg: &ExperimentConfig,
    seed: u64,
    stream: &TaskStream,
) -> Result<RunState, RunnerError> {
    let input_dim = stream.tasks[0].train.inputs.cols();
    let output_dim = if stream.regression {
        1
    } else {
        stream.label_space
    };
    let mut rng = derive_rng(seed, "init");
    let net = Network::mlp(input_dim, &cfg.hidden, output_dim, &mut rng);
    let tracked = cfg
        .hypercube_layers
        .clone()
        .unwrap_or_else(|| net.post_relu_layer_indices());
    let hc = HypercubeConfig::new(tracked.clone(), cfg.coverage_p)?;
    let store = HypercubeStore::new(&hc);
    Ok(RunState {
        net,
        store,
        tracked: hc.layer_indices,
        snapshot: None,
        fisher: None,
        mask: None,
        tasks_done: 0,
    })
}

fn batch_of(inputs: &Mat, rows: &[usize]) -> Mat {
    let mut out = Mat::zeros(rows.len(), inputs.cols());
    for (k, &i) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(inputs.row(i));
    }
    out
}

/// Per-task scores on the test splits of tasks `0..=upto`.
fn evaluate_column(
    net: &Network,
    stream: &TaskStream,
    upto: usize,
    batch: usize,
) -> Result<Vec<f64>, RunnerError> {
    let active = stream.active_classes(upto);
    let mut col = Vec::with_capacity(upto + 1);
    for task in stream.tasks.iter().take(upto + 1) {
        let test = &task.test;
        let n = test.len();
        let mut correct_weighted = 0.0;
        let mut mse_sum = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let xb = batch_of(&test.inputs, &rows);
            let out = net.predict(&xb)?;
            if stream.regression {
                let targets = test.targets.values().expect("regression targets");
                for (k, &i) in rows.iter().enumerate() {
                    let d = out.get(k, 0) - targets[i];
                    mse_sum += d * d;
                }
            } else {
                let labels: Vec<usize> = rows
                    .iter()
                    .map(|&i| test.targets.classes().expect("class targets")[i])
                    .collect();
                let acc = accuracy_percent(&out, &labels, active.as_deref());
                correct_weighted += acc * rows.len() as f64;
            }
            start = end;
        }
        col.push(if stream.regression {
            mse_sum / n as f64
        } else {
            correct_weighted / n as f64
        });
    }
    Ok(col)
}

/// Trains one task and performs all boundary work. `t` is 0-based.
#[allow(clippy::too_many_arguments)]
fn train_one_task(
    cfg: &ExperimentConfig,
    seed: u64,
    stream: &TaskStream,
    state: &mut RunState,
    record: &mut RunRecord,
    t: usize,
    run_dir: &Path,
) -> Result<(), RunnerError> {
    let started = Instant::now();
    let task = &stream.tasks[t];
    let train = &task.train;
    let n = train.len();
    let view = state.store.view_before_task(t + 1);
    let active = if stream.regression {
        None
    } else {
        stream.active_classes(t)
    };

    let lambda_drift = cfg.reg.effective_lambda_int_drift();
    let use_var = cfg.reg.lambda_var > 0.0;
    let consolidating = cfg.method == Method::Intact && t >= 1;
    let use_feat = consolidating && cfg.reg.lambda_feat > 0.0;
    let use_align = consolidating && cfg.reg.lambda_align > 0.0;
    let mut use_drift = consolidating && lambda_drift > 0.0;
    if use_drift && state.tracked.len() < 2 {
        eprintln!(
            "warning: only one tracked layer, the interval drift loss is identically zero"
        );
        use_drift = false;
    }
    let use_ewc =
        cfg.method == Method::Ewc && cfg.ewc_lambda > 0.0 && t >= 1 && state.fisher.is_some();

    let mut audit: BTreeSet<String> = BTreeSet::new();
    let feat_layer = state.tracked[0];
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &state.net);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::Rng;
            let mut rng = derive_rng(seed, &format!("shuffle/{t}/{epoch}"));
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
        }
        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let xb = batch_of(&train.inputs, rows);
            let cache = state.net.forward(&xb)?;

            let (task_loss, head_grad) = if stream.regression {
                let targets = train.targets.values().expect("regression targets");
                let yb = Mat::from_vec(rows.len(), 1, rows.iter().map(|&i| targets[i]).collect());
                mse_loss(cache.output(), &yb)?
            } else {
                let classes = train.targets.classes().expect("class targets");
                let labels: Vec<usize> = rows.iter().map(|&i| classes[i]).collect();
                softmax_cross_entropy(cache.output(), &labels, active.as_deref())?
            };
            audit.insert("task".into());
            let mut total = task_loss;
            let mut taps: Vec<(usize, Mat)> = Vec::new();

            if use_var && rows.len() >= 2 {
                let (v, var_taps) = var_loss(&cache, &state.tracked, cfg.reg.lambda_var)?;
                total += v;
                taps.extend(var_taps);
                audit.insert("var".into());
            }
            if use_feat {
                let snap = state.snapshot.as_ref().expect("snapshot exists after task 1");
                let mask = state.mask.as_ref().expect("mask derived at boundary");
                let prev_cache = snap.network().forward_prefix(&xb, feat_layer)?;
                let (v, tap) = feat_distill_loss(
                    cache.act(feat_layer),
                    prev_cache.act(feat_layer),
                    mask,
                    cfg.reg.lambda_feat,
                    cfg.reg.eps_feat,
                )?;
                total += v;
                taps.push((feat_layer, tap));
                audit.insert("feat".into());
            }
            if use_align {
                let (v, align_taps) = align_loss(
                    &cache,
                    &state.tracked,
                    &view,
                    cfg.reg.lambda_align,
                    cfg.reg.eps_align,
                )?;
                total += v;
                taps.extend(align_taps);
                audit.insert("align".into());
            }
            let mut extra_grads = Vec::new();
            if use_drift {
                let snap = state.snapshot.as_ref().expect("snapshot exists after task 1");
                let (v, g) = int_drift_loss(&state.net, snap, &view, &state.tracked, &cfg.reg)?;
                total += v;
                extra_grads.push(g);
                audit.insert("int_drift".into());
            }
            if use_ewc {
                let fisher = state.fisher.as_ref().unwrap();
                let (v, g) = ewc_penalty(&state.net, fisher, cfg.ewc_lambda)?;
                total += v;
                extra_grads.push(g);
                audit.insert("ewc".into());
            }

            if !total.is_finite() {
                return Err(RunnerError::NumericalDivergence {
                    task: t,
                    epoch,
                    batch: batch_idx,
                });
            }

            let mut grads = state.net.backward(&cache, &head_grad, &taps)?;
            for g in &extra_grads {
                grads.add_assign(g);
            }
            opt.step(&mut state.net, &grads);
        }
    }

    // boundary work: snapshot, checkpoint, hypercube refresh, mask,
    // Fisher, evaluation
    state.snapshot = Some(ParamSnapshot::take(&state.net, t + 1));
    let ckpt = run_dir.join(format!("checkpoint_task_{}.bin", t + 1));
    save_network(&ckpt, &state.net, t + 1)?;

    end_of_task_update(&mut state.store, &state.net, &train.inputs, t + 1, 1024)?;
    record.hypercube_invariant_checks += state.tracked.len();
    let store_path = run_dir.join(format!("hypercubes_task_{}.json", t + 1));
    state.store.save_json(&store_path)?;

    state.mask = Some(derive_mask(cfg, seed, t, &state.store, feat_layer)?);

    if cfg.method == Method::Ewc {
        let classes = train.targets.classes().expect("ewc is classification-only");
        let newer = fisher_estimate(
            &state.net,
            &train.inputs,
            classes,
            active.as_deref(),
            cfg.ewc_fisher_samples,
        )?;
        match &mut state.fisher {
            Some(acc) => acc.accumulate(newer),
            slot => *slot = Some(newer),
        }
    }

    let column = evaluate_column(&state.net, stream, t, 1024)?;
    record.columns.push(column);
    record.task_wall_time_s.push(started.elapsed().as_secs_f64());
    record
        .loss_terms_per_task
        .push(audit.into_iter().collect());
    record.tasks_done = t + 1;
    state.tasks_done = t + 1;
    for name in [
        format!("checkpoint_task_{}.bin", t + 1),
        format!("hypercubes_task_{}.json", t + 1),
    ] {
        if !record.artifacts.contains(&name) {
            record.artifacts.push(name);
        }
    }
    record.save(&run_dir.join("run.json"))?;
    Ok(())
}

/// Per-task feature mask in the width of the first tracked layer.
fn derive_mask(
    cfg: &ExperimentConfig,
    seed: u64,
    t: usize,
    store: &HypercubeStore,
    feat_layer: usize,
) -> Result<FeatureMask, RunnerError> {
    let dim = store
        .cumulative(feat_layer)
        .expect("feature layer recorded at boundary")
        .dim();
    Ok(match cfg.mask_policy {
        MaskPolicy::AllOnes => FeatureMask::all_ones(dim),
        MaskPolicy::RandomFraction(rho) => {
            let mut rng = derive_rng(seed, &format!("mask/{t}"));
            FeatureMask::random_fraction(dim, rho, &mut rng)?
        }
    })
}

fn finalize_record(record: &mut RunRecord) -> Result<(), RunnerError> {
    // the first task must never see a consolidation term
    if let Some(first) = record.loss_terms_per_task.first() {
        for banned in ["int_drift", "feat", "align", "ewc"] {
            if first.iter().any(|s| s == banned) {
                return Err(RunnerError::Record(format!(
                    "loss audit: `{banned}` was evaluated during the first task"
                )));
            }
        }
    }
    let r = record.accuracy_matrix();
    record.aa = Some(average_accuracy(&r)?);
    if record.n_tasks >= 2 {
        record.af_std = Some(average_forgetting_standard(&r)?);
        record.af_coda = Some(average_forgetting_coda(&r)?);
    }
    Ok(())
}

/// Runs one `(config, seed)` training from scratch, writing all
/// artifacts under the per-run directory.
pub fn run_single(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord, RunnerError> {
    let run_dir = cfg.run_dir(seed);
    fs::create_dir_all(&run_dir)?;
    let stream = load_stream(cfg, seed)?;
    let mut state = init_state(cfg, seed, &stream)?;
    let mut record = RunRecord {
        config_name: cfg.name.clone(),
        config_hash: cfg.config_hash.clone(),
        method: cfg.method.as_str().to_string(),
        seed,
        score_kind: if stream.regression {
            "mse".into()
        } else {
            "accuracy_percent".into()
        },
        tasks_done: 0,
        n_tasks: cfg.n_tasks,
        columns: Vec::new(),
        task_wall_time_s: Vec::new(),
        loss_terms_per_task: Vec::new(),
        hypercube_invariant_checks: 0,
        aa: None,
        af_std: None,
        af_coda: None,
        artifacts: Vec::new(),
    };
    for t in 0..cfg.n_tasks {
        train_one_task(cfg, seed, &stream, &mut state, &mut record, t, &run_dir)?;
    }
    finalize_record(&mut record)?;
    record.save(&run_dir.join("run.json"))?;
    fs::write(
        run_dir.join("accuracy_matrix.csv"),
        accuracy_matrix_csv(&record.accuracy_matrix()),
    )?;
    Ok(record)
}

/// Resumes a run from the saved boundary after 1-based task
/// `from_task`, reconstructing all cross-task state, and trains the
/// remaining tasks. Produces results identical to an uninterrupted run.
pub fn resume_single(
    cfg: &ExperimentConfig,
    seed: u64,
    from_task: usize,
) -> Result<RunRecord, RunnerError> {
    if from_task == 0 || from_task >= cfg.n_tasks {
        return Err(RunnerError::BadResume(format!(
            "resume boundary must be in 1..{}", cfg.n_tasks
        )));
    }
    let run_dir = cfg.run_dir(seed);
    let stream = load_stream(cfg, seed)?;

    let ckpt = run_dir.join(format!("checkpoint_task_{from_task}.bin"));
    let (net, task_index) = load_network(&ckpt)?;
    if task_index != from_task {
        return Err(RunnerError::BadResume(format!(
            "checkpoint records boundary {task_index}, expected {from_task}"
        )));
    }
    let store =
        HypercubeStore::load_json(&run_dir.join(format!("hypercubes_task_{from_task}.json")))?;
    let tracked = store.tracked_layers();
    let feat_layer = tracked[0];

    // Fisher information is recomputable: each past boundary's network is
    // checkpointed and the estimation data/order is deterministic.
    let fisher = if cfg.method == Method::Ewc {
        let mut acc: Option<FisherDiagonal> = None;
        for k in 1..=from_task {
            let (net_k, _) =
                load_network(&run_dir.join(format!("checkpoint_task_{k}.bin")))?;
            let task = &stream.tasks[k - 1];
            let active = stream.active_classes(k - 1);
            let newer = fisher_estimate(
                &net_k,
                &task.train.inputs,
                task.train.targets.classes().expect("classification"),
                active.as_deref(),
                cfg.ewc_fisher_samples,
            )?;
            match &mut acc {
                Some(a) => a.accumulate(newer),
                slot => *slot = Some(newer),
            }
        }
        acc
    } else {
        None
    };

    let mask = Some(derive_mask(cfg, seed, from_task - 1, &store, feat_layer)?);
    let mut record = RunRecord::load(&run_dir.join("run.json"))?;
    if record.tasks_done < from_task {
        return Err(RunnerError::BadResume(format!(
            "run.json covers only {} tasks, cannot resume from {from_task}",
            record.tasks_done
        )));
    }
    record.columns.truncate(from_task);
    record.task_wall_time_s.truncate(from_task);
    record.loss_terms_per_task.truncate(from_task);
    record.tasks_done = from_task;
    record.aa = None;
    record.af_std = None;
    record.af_coda = None;
    record.hypercube_invariant_checks = tracked.len() * from_task;

    let mut state = RunState {
        snapshot: Some(ParamSnapshot::take(&net, from_task)),
        net,
        store,
        tracked,
        fisher,
        mask,
        tasks_done: from_task,
    };
    for t in from_task..cfg.n_tasks {
        train_one_task(cfg, seed, &stream, &mut state, &mut record, t, &run_dir)?;
    }
    finalize_record(&mut record)?;
    record.save(&run_dir.join("run.json"))?;
    fs::write(
        run_dir.join("accuracy_matrix.csv"),
        accuracy_matrix_csv(&record.accuracy_matrix()),
    )?;
    Ok(record)
}

/// Runs every seed of a config and writes the aggregate `metrics.csv`
/// (one row per seed; NaN forgetting columns for single-task streams).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, RunnerError> {
    let records: Vec<RunRecord> = cfg
        .seeds
        .iter()
        .map(|&seed| run_single(cfg, seed))
        .collect::<Result<_, _>>()?;
    write_metrics_csv(cfg, &records)?;
    Ok(records)
}

pub fn write_metrics_csv(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
) -> Result<PathBuf, RunnerError> {
    let rows: Vec<(u64, f64, f64, f64)> = records
        .iter()
        .map(|r| {
            (
                r.seed,
                r.aa.unwrap_or(f64::NAN),
                r.af_std.unwrap_or(f64::NAN),
                r.af_coda.unwrap_or(f64::NAN),
            )
        })
        .collect();
    fs::create_dir_all(cfg.config_dir())?;
    let path = cfg.config_dir().join("metrics.csv");
    fs::write(&path, metrics_csv(&rows))?;
    Ok(path)
}

/// Evaluates a checkpoint against its stream: the accuracy column for
/// every task seen up to the checkpoint's boundary.
pub fn eval_checkpoint(
    checkpoint: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(usize, Vec<f64>), RunnerError> {
    let (net, boundary) = load_network(checkpoint)?;
    if boundary == 0 || boundary > cfg.n_tasks {
        return Err(RunnerError::BadResume(format!(
            "checkpoint boundary {boundary} outside 1..={}",
            cfg.n_tasks
        )));
    }
    let stream = load_stream(cfg, seed)?;
    let col = evaluate_column(&net, &stream, boundary - 1, 1024)?;
    Ok((boundary, col))
}
