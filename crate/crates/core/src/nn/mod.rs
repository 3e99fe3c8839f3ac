//! A small dense network stack with exact manual backpropagation.
//!
//! Layers are primitives (affine, ReLU, conv2d, frozen-stats batchnorm)
//! over flat `f64` row vectors; a batch is an `N×d` [`Mat`]. The forward
//! pass caches every intermediate activation so that the backward pass can
//! accept extra gradient injections at arbitrary layer outputs — the
//! activation-space regularizers hook in through those taps.
//!
//! Everything is `f64` end to end: the gradient test suite compares
//! analytic gradients against central finite differences at tolerances
//! that `f32` cannot meet.

mod checkpoint;
mod heads;
mod optim;

pub use checkpoint::{load_network, save_network};
pub use heads::{accuracy_percent, mse_loss, softmax_cross_entropy};
pub use optim::{Optimizer, OptimizerKind};

use crate::linalg::Mat;
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("stale activation cache: cache version {cache}, network version {net}")]
    StaleCache { cache: u64, net: u64 },
    #[error("layer {0} is missing or has no parameters of the requested kind")]
    MissingLayer(usize),
    #[error("batchnorm running stats drifted between snapshot and current network: {0}")]
    StatsDrift(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape-level description of a layer, as stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Affine {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        in_h: usize,
        in_w: usize,
    },
    BatchNormAffine {
        dim: usize,
    },
}

/// A primitive layer with its parameter tensors.
#[derive(Debug, Clone)]
pub enum Layer {
    /// `y = x·Wᵀ + b`, weights stored `out×in` (one row per output neuron).
    Affine { w: Mat, b: Vec<f64> },
    Relu,
    /// Stride-1, no-padding 2D convolution on flattened `c×h×w` rows.
    /// Kernel stored flat in `[out][in][ky][kx]` order.
    Conv2d {
        w: Vec<f64>,
        b: Vec<f64>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        in_h: usize,
        in_w: usize,
    },
    /// Inference-mode batchnorm: a per-dimension affine map with frozen
    /// running statistics. Only `gamma` and `beta` are trainable.
    BatchNormAffine {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Affine { w, .. } => LayerSpec::Affine {
                in_dim: w.cols(),
                out_dim: w.rows(),
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
                ..
            } => LayerSpec::Conv2d {
                in_ch: *in_ch,
                out_ch: *out_ch,
                kernel: *kernel,
                in_h: *in_h,
                in_w: *in_w,
            },
            Layer::BatchNormAffine { gamma, .. } => LayerSpec::BatchNormAffine { dim: gamma.len() },
        }
    }

    fn in_dim(&self) -> Option<usize> {
        match self {
            Layer::Affine { w, .. } => Some(w.cols()),
            Layer::Relu => None,
            Layer::Conv2d {
                in_ch, in_h, in_w, ..
            } => Some(in_ch * in_h * in_w),
            Layer::BatchNormAffine { gamma, .. } => Some(gamma.len()),
        }
    }

    fn trainable_len(&self) -> usize {
        match self {
            Layer::Affine { w, b } => w.len() + b.len(),
            Layer::Relu => 0,
            Layer::Conv2d { w, b, .. } => w.len() + b.len(),
            Layer::BatchNormAffine { gamma, beta, .. } => gamma.len() + beta.len(),
        }
    }
}

/// Ordered stack of layers. Mutation of parameters bumps an internal
/// version counter so stale activation caches are rejected.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    version: u64,
}

/// Cached activations of one forward pass. `act(k)` is the output of
/// layer `k`; `input()` is the batch itself.
pub struct ForwardCache {
    version: u64,
    acts: Vec<Mat>,
}

impl ForwardCache {
    pub fn input(&self) -> &Mat {
        &self.acts[0]
    }

    /// Output of layer `k`.
    pub fn act(&self, k: usize) -> &Mat {
        &self.acts[k + 1]
    }

    pub fn output(&self) -> &Mat {
        self.acts.last().unwrap()
    }
}

/// Per-layer parameter gradients, shape-parallel to [`Network`] layers.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    Affine { dw: Mat, db: Vec<f64> },
    None,
    Conv2d { dw: Vec<f64>, db: Vec<f64> },
    BatchNormAffine { dgamma: Vec<f64>, dbeta: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Affine { w, b } => LayerGrad::Affine {
                    dw: Mat::zeros(w.rows(), w.cols()),
                    db: vec![0.0; b.len()],
                },
                Layer::Relu => LayerGrad::None,
                Layer::Conv2d { w, b, .. } => LayerGrad::Conv2d {
                    dw: vec![0.0; w.len()],
                    db: vec![0.0; b.len()],
                },
                Layer::BatchNormAffine { gamma, beta, .. } => LayerGrad::BatchNormAffine {
                    dgamma: vec![0.0; gamma.len()],
                    dbeta: vec![0.0; beta.len()],
                },
            })
            .collect();
        Gradients { layers }
    }

    /// Elementwise merge: `self += other`.
    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (LayerGrad::Affine { dw, db }, LayerGrad::Affine { dw: ow, db: ob }) => {
                    dw.add_assign(ow);
                    for (x, y) in db.iter_mut().zip(ob) {
                        *x += y;
                    }
                }
                (LayerGrad::None, LayerGrad::None) => {}
                (LayerGrad::Conv2d { dw, db }, LayerGrad::Conv2d { dw: ow, db: ob }) => {
                    for (x, y) in dw.iter_mut().zip(ow) {
                        *x += y;
                    }
                    for (x, y) in db.iter_mut().zip(ob) {
                        *x += y;
                    }
                }
                (
                    LayerGrad::BatchNormAffine { dgamma, dbeta },
                    LayerGrad::BatchNormAffine {
                        dgamma: og,
                        dbeta: ob,
                    },
                ) => {
                    for (x, y) in dgamma.iter_mut().zip(og) {
                        *x += y;
                    }
                    for (x, y) in dbeta.iter_mut().zip(ob) {
                        *x += y;
                    }
                }
                _ => panic!("gradient layer kinds do not line up"),
            }
        }
    }

    /// Inverse of [`Gradients::to_flat`]: reshapes a flat gradient vector
    /// against the network's layer geometry.
    pub fn from_flat(net: &Network, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), net.num_params(), "flat gradient size");
        let mut grads = Gradients::zeros_like(net);
        let mut off = 0;
        for g in &mut grads.layers {
            match g {
                LayerGrad::Affine { dw, db } => {
                    let (nw, nb) = (dw.len(), db.len());
                    dw.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
                    off += nw;
                    db.copy_from_slice(&flat[off..off + nb]);
                    off += nb;
                }
                LayerGrad::None => {}
                LayerGrad::Conv2d { dw, db } => {
                    let (nw, nb) = (dw.len(), db.len());
                    dw.copy_from_slice(&flat[off..off + nw]);
                    off += nw;
                    db.copy_from_slice(&flat[off..off + nb]);
                    off += nb;
                }
                LayerGrad::BatchNormAffine { dgamma, dbeta } => {
                    let (ng, nb) = (dgamma.len(), dbeta.len());
                    dgamma.copy_from_slice(&flat[off..off + ng]);
                    off += ng;
                    dbeta.copy_from_slice(&flat[off..off + nb]);
                    off += nb;
                }
            }
        }
        grads
    }

    /// Gradients in the flat trainable-parameter order of
    /// [`Network::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Affine { dw, db } => {
                    out.extend_from_slice(dw.as_slice());
                    out.extend_from_slice(db);
                }
                LayerGrad::None => {}
                LayerGrad::Conv2d { dw, db } => {
                    out.extend_from_slice(dw);
                    out.extend_from_slice(db);
                }
                LayerGrad::BatchNormAffine { dgamma, dbeta } => {
                    out.extend_from_slice(dgamma);
                    out.extend_from_slice(dbeta);
                }
            }
        }
        out
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers, version: 0 }
    }

    /// `input → hidden[0] → ReLU → … → hidden[n−1] → ReLU → output`,
    /// Kaiming-uniform fan-in init for weights, zero biases.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut StdRng) -> Self {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(affine_kaiming(prev, h, rng));
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(affine_kaiming(prev, output_dim, rng));
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> Option<&Layer> {
        self.layers.get(k)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Indices of ReLU layers that sit on top of a parameterized layer —
    /// the default set of tracked activations for MLP-style stacks.
    pub fn post_relu_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(k, l)| {
                matches!(l, Layer::Relu)
                    && *k > 0
                    && !matches!(self.layers[k - 1], Layer::Relu)
            })
            .map(|(k, _)| k)
            .collect()
    }

    /// Direct mutable access for tests and surgical edits; bumps the
    /// version so outstanding caches become stale.
    pub fn layer_mut(&mut self, k: usize) -> &mut Layer {
        self.version += 1;
        &mut self.layers[k]
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| l.in_dim())
    }

    /// All trainable parameters flattened in layer order (affine: weights
    /// then bias; conv: kernel then bias; batchnorm: gamma then beta —
    /// running stats are not trainable and are excluded).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Affine { w, b } => {
                    out.extend_from_slice(w.as_slice());
                    out.extend_from_slice(b);
                }
                Layer::Relu => {}
                Layer::Conv2d { w, b, .. } => {
                    out.extend_from_slice(w);
                    out.extend_from_slice(b);
                }
                Layer::BatchNormAffine { gamma, beta, .. } => {
                    out.extend_from_slice(gamma);
                    out.extend_from_slice(beta);
                }
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::trainable_len).sum()
    }

    /// Writes a flat parameter vector back; inverse of [`params_flat`].
    ///
    /// [`params_flat`]: Network::params_flat
    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter size");
        let mut off = 0;
        for l in &mut self.layers {
            match l {
                Layer::Affine { w, b } => {
                    let (nw, nb) = (w.len(), b.len());
                    w.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
                    off += nw;
                    b.copy_from_slice(&flat[off..off + nb]);
                    off += nb;
                }
                Layer::Relu => {}
                Layer::Conv2d { w, b, .. } => {
                    let (nw, nb) = (w.len(), b.len());
                    w.copy_from_slice(&flat[off..off + nw]);
                    off += nw;
                    b.copy_from_slice(&flat[off..off + nb]);
                    off += nb;
                }
                Layer::BatchNormAffine { gamma, beta, .. } => {
                    let (ng, nb) = (gamma.len(), beta.len());
                    gamma.copy_from_slice(&flat[off..off + ng]);
                    off += ng;
                    beta.copy_from_slice(&flat[off..off + nb]);
                    off += nb;
                }
            }
        }
        self.version += 1;
    }

    /// Forward pass over a batch, caching every layer output.
    pub fn forward(&self, x: &Mat) -> Result<ForwardCache, NnError> {
        if let Some(d) = self.input_dim() {
            if x.cols() != d {
                return Err(NnError::ShapeMismatch(format!(
                    "input has {} columns, network expects {}",
                    x.cols(),
                    d
                )));
            }
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out = self.apply_layer(k, layer, input)?;
            acts.push(out);
        }
        Ok(ForwardCache {
            version: self.version,
            acts,
        })
    }

    fn apply_layer(&self, k: usize, layer: &Layer, x: &Mat) -> Result<Mat, NnError> {
        match layer {
            Layer::Affine { w, b } => {
                if x.cols() != w.cols() {
                    return Err(NnError::ShapeMismatch(format!(
                        "layer {k}: input width {} vs affine in_dim {}",
                        x.cols(),
                        w.cols()
                    )));
                }
                let mut y = x.matmul_nt(w);
                y.add_row_vec(b);
                Ok(y)
            }
            Layer::Relu => {
                let mut y = x.clone();
                y.map_inplace(|v| if v > 0.0 { v } else { 0.0 });
                Ok(y)
            }
            Layer::Conv2d {
                w,
                b,
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
            } => {
                let (c, oc, kk, ih, iw) = (*in_ch, *out_ch, *kernel, *in_h, *in_w);
                if x.cols() != c * ih * iw {
                    return Err(NnError::ShapeMismatch(format!(
                        "layer {k}: input width {} vs conv {}x{}x{}",
                        x.cols(),
                        c,
                        ih,
                        iw
                    )));
                }
                let oh = ih - kk + 1;
                let ow = iw - kk + 1;
                let mut y = Mat::zeros(x.rows(), oc * oh * ow);
                for n in 0..x.rows() {
                    let xin = x.row(n);
                    let yout = y.row_mut(n);
                    for o in 0..oc {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = b[o];
                                for ci in 0..c {
                                    for ky in 0..kk {
                                        for kx in 0..kk {
                                            let xi = ci * ih * iw + (oy + ky) * iw + (ox + kx);
                                            let wi = ((o * c + ci) * kk + ky) * kk + kx;
                                            acc += xin[xi] * w[wi];
                                        }
                                    }
                                }
                                yout[o * oh * ow + oy * ow + ox] = acc;
                            }
                        }
                    }
                }
                Ok(y)
            }
            Layer::BatchNormAffine {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                if x.cols() != gamma.len() {
                    return Err(NnError::ShapeMismatch(format!(
                        "layer {k}: input width {} vs batchnorm dim {}",
                        x.cols(),
                        gamma.len()
                    )));
                }
                let mut y = x.clone();
                for n in 0..y.rows() {
                    let row = y.row_mut(n);
                    for j in 0..gamma.len() {
                        let s = (var[j] + eps).sqrt();
                        row[j] = gamma[j] * (row[j] - mean[j]) / s + beta[j];
                    }
                }
                Ok(y)
            }
        }
    }

    /// Convenience forward without keeping the cache.
    pub fn predict(&self, x: &Mat) -> Result<Mat, NnError> {
        let mut cache = self.forward(x)?;
        Ok(cache.acts.pop().expect("forward produces at least one activation"))
    }

    /// Forward through layers `0..=upto` only; `cache.act(k)` is valid
    /// for `k <= upto`. Cheaper than a full pass when only an early
    /// activation is needed (frozen feature extraction).
    pub fn forward_prefix(&self, x: &Mat, upto: usize) -> Result<ForwardCache, NnError> {
        if upto >= self.layers.len() {
            return Err(NnError::MissingLayer(upto));
        }
        let mut acts = Vec::with_capacity(upto + 2);
        acts.push(x.clone());
        for (k, layer) in self.layers.iter().enumerate().take(upto + 1) {
            let out = self.apply_layer(k, layer, acts.last().unwrap())?;
            acts.push(out);
        }
        Ok(ForwardCache {
            version: self.version,
            acts,
        })
    }

    /// Backpropagates `head_grad` (dL/d output) plus optional extra
    /// gradients injected at given layer outputs (`taps[k]` is added to
    /// dL/d act(k) before flowing further down). Returns exact parameter
    /// gradients of the combined scalar objective.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        head_grad: &Mat,
        taps: &[(usize, Mat)],
    ) -> Result<Gradients, NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache {
                cache: cache.version,
                net: self.version,
            });
        }
        let out = cache.output();
        if head_grad.rows() != out.rows() || head_grad.cols() != out.cols() {
            return Err(NnError::ShapeMismatch(format!(
                "head gradient {}x{} vs output {}x{}",
                head_grad.rows(),
                head_grad.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = head_grad.clone();
        for k in (0..self.layers.len()).rev() {
            for (tk, tg) in taps {
                if *tk == k {
                    if tg.rows() != g.rows() || tg.cols() != g.cols() {
                        return Err(NnError::ShapeMismatch(format!(
                            "tap at layer {k}: {}x{} vs activation {}x{}",
                            tg.rows(),
                            tg.cols(),
                            g.rows(),
                            g.cols()
                        )));
                    }
                    g.add_assign(tg);
                }
            }
            let x = cache.act_input(k);
            g = self.backward_layer(k, x, &g, &mut grads.layers[k])?;
        }
        Ok(grads)
    }

    fn backward_layer(
        &self,
        k: usize,
        x: &Mat,
        g: &Mat,
        out: &mut LayerGrad,
    ) -> Result<Mat, NnError> {
        match (&self.layers[k], out) {
            (Layer::Affine { w, .. }, LayerGrad::Affine { dw, db }) => {
                *dw = g.matmul_tn(x);
                *db = g.col_sums();
                Ok(g.matmul(w))
            }
            (Layer::Relu, LayerGrad::None) => {
                let mut dx = g.clone();
                for (d, &xi) in dx.as_mut_slice().iter_mut().zip(x.iter()) {
                    if xi <= 0.0 {
                        *d = 0.0;
                    }
                }
                Ok(dx)
            }
            (
                Layer::Conv2d {
                    w,
                    in_ch,
                    out_ch,
                    kernel,
                    in_h,
                    in_w,
                    ..
                },
                LayerGrad::Conv2d { dw, db },
            ) => {
                let (c, oc, kk, ih, iw) = (*in_ch, *out_ch, *kernel, *in_h, *in_w);
                let oh = ih - kk + 1;
                let ow = iw - kk + 1;
                let mut dx = Mat::zeros(g.rows(), c * ih * iw);
                for n in 0..g.rows() {
                    let gin = g.row(n);
                    let xin = x.row(n);
                    let dxr = dx.row_mut(n);
                    for o in 0..oc {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = gin[o * oh * ow + oy * ow + ox];
                                if gv == 0.0 {
                                    continue;
                                }
                                db[o] += gv;
                                for ci in 0..c {
                                    for ky in 0..kk {
                                        for kx in 0..kk {
                                            let xi = ci * ih * iw + (oy + ky) * iw + (ox + kx);
                                            let wi = ((o * c + ci) * kk + ky) * kk + kx;
                                            dw[wi] += gv * xin[xi];
                                            dxr[xi] += gv * w[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(dx)
            }
            (
                Layer::BatchNormAffine {
                    gamma,
                    mean,
                    var,
                    eps,
                    ..
                },
                LayerGrad::BatchNormAffine { dgamma, dbeta },
            ) => {
                let mut dx = Mat::zeros(g.rows(), gamma.len());
                for n in 0..g.rows() {
                    let gr = g.row(n);
                    let xr = x.row(n);
                    let dxr = dx.row_mut(n);
                    for j in 0..gamma.len() {
                        let s = (var[j] + eps).sqrt();
                        dgamma[j] += gr[j] * (xr[j] - mean[j]) / s;
                        dbeta[j] += gr[j];
                        dxr[j] = gr[j] * gamma[j] / s;
                    }
                }
                Ok(dx)
            }
            _ => unreachable!("gradient buffers built from the same network"),
        }
    }
}

impl ForwardCache {
    /// Input of layer `k` (output of layer `k−1`, or the batch itself).
    fn act_input(&self, k: usize) -> &Mat {
        &self.acts[k]
    }
}

fn affine_kaiming(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Layer {
    let bound = (6.0 / in_dim as f64).sqrt();
    let mut w = Mat::zeros(out_dim, in_dim);
    for v in w.as_mut_slice() {
        *v = rng.gen_range(-bound..bound);
    }
    Layer::Affine {
        w,
        b: vec![0.0; out_dim],
    }
}

/// Conv layer with Kaiming-uniform fan-in init.
pub fn conv2d_kaiming(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    in_h: usize,
    in_w: usize,
    rng: &mut StdRng,
) -> Layer {
    let fan_in = in_ch * kernel * kernel;
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut w = vec![0.0; out_ch * in_ch * kernel * kernel];
    for v in &mut w {
        *v = rng.gen_range(-bound..bound);
    }
    Layer::Conv2d {
        w,
        b: vec![0.0; out_ch],
        in_ch,
        out_ch,
        kernel,
        in_h,
        in_w,
    }
}

/// Frozen copy of all parameter tensors, tagged with the task index at
/// which it was taken. The deltas `θ(current) − θ(snapshot)` drive the
/// drift regularizer; the embedded network serves frozen forward passes
/// for feature distillation.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    net: Network,
    task_index: usize,
}

impl ParamSnapshot {
    pub fn take(net: &Network, task_index: usize) -> Self {
        ParamSnapshot {
            net: net.clone(),
            task_index,
        }
    }

    pub fn task_index(&self) -> usize {
        self.task_index
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// `(ΔW, Δb)` of the affine layer at `layer_index`, current minus
    /// snapshot.
    pub fn delta_affine(&self, net: &Network, layer_index: usize) -> Result<(Mat, Vec<f64>), NnError> {
        match (net.layer(layer_index), self.net.layer(layer_index)) {
            (Some(Layer::Affine { w, b }), Some(Layer::Affine { w: sw, b: sb }))
                if w.rows() == sw.rows() && w.cols() == sw.cols() =>
            {
                let mut dw = w.clone();
                for (d, s) in dw.as_mut_slice().iter_mut().zip(sw.as_slice()) {
                    *d -= s;
                }
                let db = b.iter().zip(sb).map(|(c, s)| c - s).collect();
                Ok((dw, db))
            }
            _ => Err(NnError::MissingLayer(layer_index)),
        }
    }

    /// Flat `(Δkernel, Δbias)` of the conv layer at `layer_index`.
    pub fn delta_conv(
        &self,
        net: &Network,
        layer_index: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        match (net.layer(layer_index), self.net.layer(layer_index)) {
            (Some(Layer::Conv2d { w, b, .. }), Some(Layer::Conv2d { w: sw, b: sb, .. }))
                if w.len() == sw.len() && b.len() == sb.len() =>
            {
                Ok((
                    w.iter().zip(sw).map(|(c, s)| c - s).collect(),
                    b.iter().zip(sb).map(|(c, s)| c - s).collect(),
                ))
            }
            _ => Err(NnError::MissingLayer(layer_index)),
        }
    }
}

/// Effective affine update of a frozen-stats batchnorm layer:
///
/// ```text
/// ΔW_eff[j] = Δγ[j] / sqrt(σ²[j] + ε)
/// Δb_eff[j] = Δβ[j] − Δγ[j]·μ[j] / sqrt(σ²[j] + ε)
/// ```
///
/// Running statistics must be identical between the two layers — they are
/// frozen at snapshot time, so any difference means the layers are not
/// comparable.
pub fn batchnorm_effective_delta(
    cur: &Layer,
    snap: &Layer,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    match (cur, snap) {
        (
            Layer::BatchNormAffine {
                gamma,
                beta,
                mean,
                var,
                eps,
            },
            Layer::BatchNormAffine {
                gamma: sg,
                beta: sb,
                mean: sm,
                var: sv,
                eps: se,
            },
        ) => {
            if gamma.len() != sg.len() {
                return Err(NnError::ShapeMismatch(format!(
                    "batchnorm dims {} vs {}",
                    gamma.len(),
                    sg.len()
                )));
            }
            if eps != se || mean != sm || var != sv {
                return Err(NnError::StatsDrift(
                    "running mean/var/eps differ".into(),
                ));
            }
            let mut dw_eff = Vec::with_capacity(gamma.len());
            let mut db_eff = Vec::with_capacity(gamma.len());
            for j in 0..gamma.len() {
                let s = (var[j] + eps).sqrt();
                let dgamma = gamma[j] - sg[j];
                let dbeta = beta[j] - sb[j];
                dw_eff.push(dgamma / s);
                db_eff.push(dbeta - dgamma * mean[j] / s);
            }
            Ok((dw_eff, db_eff))
        }
        _ => Err(NnError::ShapeMismatch(
            "batchnorm_effective_delta expects batchnorm layers".into(),
        )),
    }
}

/// Central finite differences of a scalar function of a parameter vector.
/// Independent oracle for every analytic gradient in this crate.
pub fn central_difference_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut x = params.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Largest relative error between an analytic gradient and a reference,
/// with an absolute floor so near-zero entries do not blow up the ratio.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / (a.abs().max(r.abs()).max(1e-6)))
        .fold(0.0, f64::max)
}
