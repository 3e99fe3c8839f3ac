use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use intact_cli::config::ExperimentConfig;
use intact_cli::drift::run_drift;
use intact_cli::runner::{eval_checkpoint, run_experiment, RunRecord};
use intact_core::metrics::{
    average_accuracy, average_forgetting_coda, average_forgetting_standard, AccuracyMatrix,
};
use std::path::PathBuf;

/// Continual-learning experiments with interval-based activation
/// consolidation.
#[derive(Parser)]
#[command(name = "intact", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write metrics, checkpoints and
    /// hypercube stores.
    Run {
        /// Path to a .cfg experiment file.
        config: PathBuf,
    },
    /// Evaluate a checkpoint on every task seen up to its boundary.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Stream seed (defaults to the config's first seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Probe activation drift of per-task reference samples across
    /// checkpoints; trains first if artifacts are missing.
    Drift {
        config: PathBuf,
    },
    /// Recompute metrics from a run directory's accuracy_matrix.csv.
    Metrics {
        run_dir: PathBuf,
    },
    /// Generate the procedural digit surrogate as IDX files (for
    /// environments without the real datasets).
    GenData {
        /// Dataset directory to create, e.g. data/mnist.
        dir: PathBuf,
        #[arg(long, default_value_t = 60000)]
        train_n: usize,
        #[arg(long, default_value_t = 10000)]
        test_n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn print_record(r: &RunRecord) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    println!(
        "seed {:>3}  {}: AA {}  AF_std {}  AF_coda {}  ({:.1}s)",
        r.seed,
        r.score_kind,
        fmt(r.aa),
        fmt(r.af_std),
        fmt(r.af_coda),
        r.task_wall_time_s.iter().sum::<f64>()
    );
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            println!(
                "running {} ({}, {} seeds, hash {})",
                cfg.name,
                cfg.method.as_str(),
                cfg.seeds.len(),
                cfg.config_hash
            );
            let records = run_experiment(&cfg)?;
            for r in &records {
                print_record(r);
            }
            println!(
                "artifacts under {}",
                cfg.config_dir().display()
            );
        }
        Command::Eval { checkpoint, config, seed } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (boundary, col) = eval_checkpoint(&checkpoint, &cfg, seed)?;
            println!("checkpoint after task {boundary}:");
            for (i, v) in col.iter().enumerate() {
                println!("  task {i}: {v:.2}");
            }
        }
        Command::Drift { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            for (path, trace) in run_drift(&cfg)? {
                println!("{} ({} records)", path.display(), trace.records.len());
            }
        }
        Command::Metrics { run_dir } => {
            let csv = std::fs::read_to_string(run_dir.join("accuracy_matrix.csv"))
                .with_context(|| format!("reading {}/accuracy_matrix.csv", run_dir.display()))?;
            let r = parse_accuracy_csv(&csv)?;
            println!("AA      {:.2}", average_accuracy(&r)?);
            if r.num_tasks() >= 2 {
                println!("AF_std  {:.2}", average_forgetting_standard(&r)?);
                println!("AF_coda {:.2}", average_forgetting_coda(&r)?);
            }
        }
        Command::GenData { dir, train_n, test_n, seed } => {
            intact_core::data::synth::write_synthetic_idx_dir(&dir, train_n, test_n, seed)?;
            println!(
                "wrote synthetic digit surrogate ({train_n} train / {test_n} test) to {}",
                dir.display()
            );
        }
    }
    Ok(())
}

fn parse_accuracy_csv(csv: &str) -> Result<AccuracyMatrix> {
    let mut entries = Vec::new();
    let mut max_task = 0usize;
    for (k, line) in csv.lines().enumerate() {
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            bail!("line {}: expected task_i,task_j,accuracy", k + 1);
        }
        let i: usize = parts[0].trim().parse()?;
        let j: usize = parts[1].trim().parse()?;
        let v: f64 = parts[2].trim().parse()?;
        max_task = max_task.max(j);
        entries.push((i, j, v));
    }
    let mut r = AccuracyMatrix::new(max_task + 1);
    for (i, j, v) in entries {
        r.set(i, j, v);
    }
    Ok(r)
}
