//! Dataset ingestion and task-stream construction.
//!
//! Split streams partition a labeled dataset into tasks of consecutive
//! class pairs. Class-incremental streams keep original labels and grow
//! the active label set; domain-incremental streams share one binary
//! label space, each class mapped to its within-pair index. Both use the
//! identical input partition for a given seed.

pub mod idx;
pub mod synth;

use crate::linalg::Mat;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { expected: u32, got: u32 },
    #[error("truncated IDX file: expected at least {expected} bytes, got {got}")]
    TruncatedFile { expected: usize, got: usize },
    #[error("{classes} classes cannot be divided into {tasks} equal tasks")]
    IndivisibleClasses { classes: usize, tasks: usize },
    #[error("dataset mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Tasks introduce disjoint new classes; the active label set grows.
    Cil,
    /// Label space fixed across tasks; the input distribution shifts.
    Dil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Classification labels or regression targets.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes(v) => Some(v),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Targets::Values(v) => Some(v),
            Targets::Classes(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Mat,
    pub targets: Targets,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<(), DataError> {
        if self.inputs.rows() != self.targets.len() {
            return Err(DataError::Mismatch(format!(
                "{} inputs vs {} targets",
                self.inputs.rows(),
                self.targets.len()
            )));
        }
        Ok(())
    }
}

/// One task of a stream: its train/test splits and, for classification,
/// the original classes it contains.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: Dataset,
    pub test: Dataset,
    /// Original class ids grouped into this task (classification only).
    pub original_classes: Vec<usize>,
}

/// Ordered tasks plus the label-space semantics.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub scenario: Scenario,
    /// Width of the label space: total class count for class-incremental
    /// streams, classes-per-task for domain-incremental, 0 for
    /// regression.
    pub label_space: usize,
    pub regression: bool,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Active-class mask after seeing tasks `0..=upto` (class-incremental
    /// streams only; domain-incremental and regression use the full
    /// head).
    pub fn active_classes(&self, upto: usize) -> Option<Vec<bool>> {
        match self.scenario {
            Scenario::Dil => None,
            Scenario::Cil => {
                let mut mask = vec![false; self.label_space];
                for task in self.tasks.iter().take(upto + 1) {
                    for &c in &task.original_classes {
                        mask[c] = true;
                    }
                }
                Some(mask)
            }
        }
    }
}

/// Loads `{train,test}-{images,labels}.idx` from a dataset directory.
pub fn load_idx_dir(dir: &Path) -> Result<((Mat, Vec<u8>), (Mat, Vec<u8>)), DataError> {
    let read = |name: &str| -> Result<Vec<u8>, DataError> {
        Ok(std::fs::read(dir.join(name))?)
    };
    let (train_images, _, _) = idx::parse_idx_images(&read("train-images.idx")?)?;
    let train_labels = idx::parse_idx_labels(&read("train-labels.idx")?)?;
    let (test_images, _, _) = idx::parse_idx_images(&read("test-images.idx")?)?;
    let test_labels = idx::parse_idx_labels(&read("test-labels.idx")?)?;
    if train_images.rows() != train_labels.len() || test_images.rows() != test_labels.len() {
        return Err(DataError::Mismatch(
            "image and label counts differ".into(),
        ));
    }
    Ok(((train_images, train_labels), (test_images, test_labels)))
}

/// Splits a labeled dataset into `n_tasks` tasks of consecutive class
/// groups: task k holds classes {k·g, …, k·g+g−1} with `g = C/n_tasks`.
///
/// Class-incremental: original labels survive, the head grows. Domain-
/// incremental: labels map to the within-group index, so every task is
/// the same `g`-way problem over shifting inputs. The input partition
/// depends only on the data and seed, never on the scenario.
pub fn make_split_stream(
    train: (&Mat, &[u8]),
    test: (&Mat, &[u8]),
    scenario: Scenario,
    n_tasks: usize,
    seed: u64,
) -> Result<TaskStream, DataError> {
    let n_classes = 1 + *train
        .1
        .iter()
        .chain(test.1)
        .max()
        .ok_or(DataError::Mismatch("empty dataset".into()))? as usize;
    if n_tasks == 0 || n_classes % n_tasks != 0 {
        return Err(DataError::IndivisibleClasses {
            classes: n_classes,
            tasks: n_tasks,
        });
    }
    let group = n_classes / n_tasks;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let classes: Vec<usize> = (t * group..(t + 1) * group).collect();
        let build = |images: &Mat, labels: &[u8], split: Split, rng: &mut StdRng| {
            let mut indices: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| classes.contains(&(l as usize)))
                .map(|(i, _)| i)
                .collect();
            // deterministic within-task shuffle
            for i in (1..indices.len()).rev() {
                let j = rng.gen_range(0..=i);
                indices.swap(i, j);
            }
            let mut inputs = Mat::zeros(indices.len(), images.cols());
            let mut mapped = Vec::with_capacity(indices.len());
            for (row, &i) in indices.iter().enumerate() {
                inputs.row_mut(row).copy_from_slice(images.row(i));
                let orig = labels[i] as usize;
                mapped.push(match scenario {
                    Scenario::Cil => orig,
                    Scenario::Dil => orig - t * group,
                });
            }
            Dataset {
                inputs,
                targets: Targets::Classes(mapped),
                split,
            }
        };
        let train_ds = build(train.0, train.1, Split::Train, &mut rng);
        let test_ds = build(test.0, test.1, Split::Test, &mut rng);
        train_ds.check()?;
        test_ds.check()?;
        tasks.push(Task {
            train: train_ds,
            test: test_ds,
            original_classes: classes,
        });
    }
    Ok(TaskStream {
        tasks,
        scenario,
        label_space: match scenario {
            Scenario::Cil => n_classes,
            Scenario::Dil => group,
        },
        regression: false,
    })
}

/// Bell-curve regression toy: the target `exp(−x²/2)` on `[−3, 3]`,
/// learned over `n_tasks` contiguous equal segments. Training targets
/// carry additive Gaussian noise; the test split covers the full domain,
/// each task owning the points inside its own segment.
pub fn gaussian_toy_stream(
    n_tasks: usize,
    points_per_task: usize,
    noise_sd: f64,
    seed: u64,
) -> TaskStream {
    const LO: f64 = -3.0;
    const HI: f64 = 3.0;
    let mut rng = StdRng::seed_from_u64(seed);
    let seg = (HI - LO) / n_tasks as f64;
    let target = |x: f64| (-x * x / 2.0).exp();

    // full-domain test points, assigned to segments
    let test_per_task = (points_per_task / 2).max(16);
    let mut test_xs: Vec<Vec<f64>> = vec![Vec::new(); n_tasks];
    for t in 0..n_tasks {
        for i in 0..test_per_task {
            let lo = LO + t as f64 * seg;
            test_xs[t].push(lo + seg * (i as f64 + 0.5) / test_per_task as f64);
        }
    }

    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let lo = LO + t as f64 * seg;
        let mut train_x = Vec::with_capacity(points_per_task);
        let mut train_y = Vec::with_capacity(points_per_task);
        for _ in 0..points_per_task {
            let x = rng.gen_range(lo..lo + seg);
            let noise = gaussian(&mut rng) * noise_sd;
            train_x.push(x);
            train_y.push(target(x) + noise);
        }
        let test_x = &test_xs[t];
        let test_y: Vec<f64> = test_x.iter().map(|&x| target(x)).collect();
        tasks.push(Task {
            train: Dataset {
                inputs: Mat::from_vec(points_per_task, 1, train_x),
                targets: Targets::Values(train_y),
                split: Split::Train,
            },
            test: Dataset {
                inputs: Mat::from_vec(test_x.len(), 1, test_x.clone()),
                targets: Targets::Values(test_y),
                split: Split::Test,
            },
            original_classes: vec![],
        });
    }
    TaskStream {
        tasks,
        scenario: Scenario::Dil,
        label_space: 0,
        regression: true,
    }
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut StdRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_labeled(n_per_class: usize, n_classes: u8) -> (Mat, Vec<u8>) {
        let n = n_per_class * n_classes as usize;
        let mut inputs = Mat::zeros(n, 3);
        let mut labels = Vec::with_capacity(n);
        for c in 0..n_classes {
            for i in 0..n_per_class {
                let row = (c as usize) * n_per_class + i;
                inputs.row_mut(row).copy_from_slice(&[
                    c as f64,
                    i as f64 / n_per_class as f64,
                    0.5,
                ]);
                labels.push(c);
            }
        }
        (inputs, labels)
    }

    #[test]
    fn split_stream_pairs_classes_in_order() {
        let (ti, tl) = toy_labeled(6, 10);
        let (vi, vl) = toy_labeled(2, 10);
        let stream =
            make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Cil, 5, 0).unwrap();
        assert_eq!(stream.num_tasks(), 5);
        assert_eq!(stream.label_space, 10);
        let expected: Vec<Vec<usize>> =
            vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]];
        for (task, classes) in stream.tasks.iter().zip(&expected) {
            assert_eq!(&task.original_classes, classes);
            let seen: std::collections::BTreeSet<usize> =
                task.train.targets.classes().unwrap().iter().copied().collect();
            assert_eq!(seen, classes.iter().copied().collect());
            assert_eq!(task.train.len(), 12);
            assert_eq!(task.test.len(), 4);
        }
        // class sets are pairwise disjoint and cover the dataset
        let mut all: Vec<usize> = stream
            .tasks
            .iter()
            .flat_map(|t| t.original_classes.clone())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn dil_maps_labels_to_within_pair_index() {
        let (ti, tl) = toy_labeled(4, 10);
        let (vi, vl) = toy_labeled(2, 10);
        let stream =
            make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Dil, 5, 0).unwrap();
        assert_eq!(stream.label_space, 2);
        for task in &stream.tasks {
            let seen: std::collections::BTreeSet<usize> =
                task.train.targets.classes().unwrap().iter().copied().collect();
            assert_eq!(seen, [0usize, 1].into_iter().collect());
        }
    }

    #[test]
    fn cil_and_dil_share_the_input_partition() {
        let (ti, tl) = toy_labeled(5, 10);
        let (vi, vl) = toy_labeled(2, 10);
        let cil = make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Cil, 5, 9).unwrap();
        let dil = make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Dil, 5, 9).unwrap();
        for (a, b) in cil.tasks.iter().zip(&dil.tasks) {
            assert_eq!(a.train.inputs.as_slice(), b.train.inputs.as_slice());
            assert_eq!(a.test.inputs.as_slice(), b.test.inputs.as_slice());
            // labels differ only by the pair offset
            let offset = a.original_classes[0];
            for (ca, cb) in a
                .train
                .targets
                .classes()
                .unwrap()
                .iter()
                .zip(b.train.targets.classes().unwrap())
            {
                assert_eq!(*ca, cb + offset);
            }
        }
    }

    #[test]
    fn stream_construction_is_seed_deterministic() {
        let (ti, tl) = toy_labeled(5, 4);
        let (vi, vl) = toy_labeled(2, 4);
        let a = make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Cil, 2, 7).unwrap();
        let b = make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Cil, 2, 7).unwrap();
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            assert_eq!(x.train.inputs.as_slice(), y.train.inputs.as_slice());
            assert_eq!(x.train.targets.classes(), y.train.targets.classes());
        }
    }

    #[test]
    fn indivisible_classes_are_rejected() {
        let (ti, tl) = toy_labeled(3, 10);
        let (vi, vl) = toy_labeled(1, 10);
        assert!(matches!(
            make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Cil, 3, 0),
            Err(DataError::IndivisibleClasses { classes: 10, tasks: 3 })
        ));
    }

    #[test]
    fn active_classes_grow_for_cil_only() {
        let (ti, tl) = toy_labeled(3, 4);
        let (vi, vl) = toy_labeled(1, 4);
        let cil = make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Cil, 2, 0).unwrap();
        assert_eq!(
            cil.active_classes(0).unwrap(),
            vec![true, true, false, false]
        );
        assert_eq!(cil.active_classes(1).unwrap(), vec![true; 4]);
        let dil = make_split_stream((&ti, &tl), (&vi, &vl), Scenario::Dil, 2, 0).unwrap();
        assert!(dil.active_classes(1).is_none());
    }

    #[test]
    fn gaussian_toy_segments_and_targets() {
        let stream = gaussian_toy_stream(3, 64, 0.0, 11);
        assert!(stream.regression);
        assert_eq!(stream.num_tasks(), 3);
        let bounds = [(-3.0, -1.0), (-1.0, 1.0), (1.0, 3.0)];
        for (task, (lo, hi)) in stream.tasks.iter().zip(bounds) {
            for i in 0..task.train.len() {
                let x = task.train.inputs.get(i, 0);
                assert!(x >= lo && x < hi + 1e-12, "{x} outside [{lo}, {hi})");
            }
            // noiseless test targets equal the bell curve exactly
            for (i, &y) in task.test.targets.values().unwrap().iter().enumerate() {
                let x = task.test.inputs.get(i, 0);
                assert_eq!(y, (-x * x / 2.0).exp());
            }
        }
        // peak and tails of the target function
        assert!(((0.0f64).cos() - 1.0).abs() < 1e-15); // sanity on stdlib
        assert_eq!((0.0f64 * 0.0 / 2.0).exp(), 1.0);
        assert!(((-(3.0f64 * 3.0) / 2.0).exp() - (-4.5f64).exp()).abs() < 1e-18);

        // seeded generation reproduces bit-exactly
        let again = gaussian_toy_stream(3, 64, 0.0, 11);
        for (a, b) in stream.tasks.iter().zip(&again.tasks) {
            assert_eq!(a.train.inputs.as_slice(), b.train.inputs.as_slice());
            assert_eq!(a.train.targets.values(), b.train.targets.values());
        }
    }

    #[test]
    fn gaussian_toy_noise_perturbs_training_targets() {
        let clean = gaussian_toy_stream(3, 32, 0.0, 3);
        let noisy = gaussian_toy_stream(3, 32, 0.05, 3);
        let a = clean.tasks[0].train.targets.values().unwrap();
        let b = noisy.tasks[0].train.targets.values().unwrap();
        assert!(a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-6));
    }
}
