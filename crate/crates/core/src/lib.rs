//! Building blocks for interval-based task activation consolidation.
//!
//! The crate is organized around the training-time data flow:
//!
//! * [`interval`] — exact closed-interval arithmetic on `f64` scalars,
//!   boxes, matrices and convolution kernels, including the
//!   positive/negative-part bound for affine maps over a box.
//! * [`linalg`] — the dense row-major matrix type used by the network stack.
//! * [`nn`] — a small dense network (affine / ReLU / conv2d / frozen
//!   batchnorm) with exact manual backpropagation, SGD/Adam, parameter
//!   snapshots and a bit-exact checkpoint format.
//! * [`hypercube`] — percentile activation hypercubes per tracked layer,
//!   per-task and cumulative, built only at task boundaries.
//! * [`regularizers`] — the four consolidation losses (interval drift,
//!   compactness, inter-task alignment, masked feature distillation) with
//!   analytic parameter gradients, plus conv and batchnorm drift variants.
//! * [`baselines`] — naive fine-tuning is the all-zero-λ limit; elastic
//!   weight consolidation ships as the comparison regularizer.
//! * [`data`] — IDX dataset ingestion, split-stream construction with
//!   class- and domain-incremental semantics, the Gaussian regression toy
//!   and a procedural digit surrogate for offline environments.
//! * [`metrics`] — accuracy-matrix bookkeeping, average accuracy, both
//!   average-forgetting variants and the activation drift probe.

pub mod baselines;
pub mod data;
pub mod hypercube;
pub mod interval;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod regularizers;


pub use linalg::Mat;
