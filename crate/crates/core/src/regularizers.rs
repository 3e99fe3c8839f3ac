//! The four consolidation losses, with exact analytic gradients.
//!
//! * **Interval drift** — squared endpoints of the interval image of
//!   `(ΔW, Δb)` over the protected input box. Driving both endpoints to
//!   zero pins the whole affine drift on that box.
//! * **Compactness** — batch dispersion of tracked activations; smaller
//!   dispersion means tighter future hypercubes.
//! * **Inter-task alignment** — squared distance between the current
//!   batch center and the previous task's box center, scaled inversely by
//!   the previous box's mean radius.
//! * **Masked feature distillation** — masked MSE between current
//!   features and the frozen previous-task features at the first tracked
//!   layer, which the drift loss cannot reach.
//!
//! Each loss returns its λ-scaled value. Terms with λ = 0 should simply
//! not be evaluated; the fine-tuning baseline is exactly that limit.

use crate::hypercube::TrackerView;
use crate::interval::Hypercube;
use crate::linalg::Mat;
use crate::nn::{ForwardCache, Gradients, Layer, LayerGrad, Network, NnError, ParamSnapshot};
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegularizerError {
    #[error("no cumulative hypercube available for layer {0}")]
    MissingHypercube(usize),
    #[error("drift loss needs at least two tracked layers; with one it is identically zero")]
    SingleLayerTracked,
    #[error("batch of {0} samples is too small for a dispersion estimate")]
    BatchTooSmall(usize),
    #[error("feature mask has no active entries")]
    MaskAllZero,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Loss coefficients and stabilizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda_int_drift: f64,
    pub lambda_var: f64,
    pub lambda_align: f64,
    pub lambda_feat: f64,
    /// Stabilizer in the alignment denominator.
    pub eps_align: f64,
    /// Stabilizer in the distillation normalizer.
    pub eps_feat: f64,
    /// When set to the total class count `C`, the drift coefficient is
    /// divided by `C` — the domain-incremental scaling rule.
    pub dil_class_scaling: Option<usize>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            lambda_int_drift: 0.0,
            lambda_var: 0.0,
            lambda_align: 0.0,
            lambda_feat: 0.0,
            eps_align: 1e-8,
            eps_feat: 1e-8,
            dil_class_scaling: None,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<(), RegularizerError> {
        for (name, v) in [
            ("lambda_int_drift", self.lambda_int_drift),
            ("lambda_var", self.lambda_var),
            ("lambda_align", self.lambda_align),
            ("lambda_feat", self.lambda_feat),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(RegularizerError::DimensionMismatch(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        if !(self.eps_align > 0.0) || !(self.eps_feat > 0.0) {
            return Err(RegularizerError::DimensionMismatch(
                "stabilizers must be positive".into(),
            ));
        }
        if self.dil_class_scaling == Some(0) {
            return Err(RegularizerError::DimensionMismatch(
                "class scaling divisor must be nonzero".into(),
            ));
        }
        Ok(())
    }

    /// λ_IntDrift after optional division by the class count.
    pub fn effective_lambda_int_drift(&self) -> f64 {
        match self.dil_class_scaling {
            Some(c) => self.lambda_int_drift / c as f64,
            None => self.lambda_int_drift,
        }
    }
}

/// Binary mask selecting which feature dimensions the distillation loss
/// stabilizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    mask: Vec<bool>,
}

impl FeatureMask {
    pub fn new(mask: Vec<bool>) -> Result<Self, RegularizerError> {
        if !mask.iter().any(|&m| m) {
            return Err(RegularizerError::MaskAllZero);
        }
        Ok(FeatureMask { mask })
    }

    /// Plain distillation over every dimension.
    pub fn all_ones(dim: usize) -> Self {
        FeatureMask {
            mask: vec![true; dim],
        }
    }

    /// Random subset keeping roughly `fraction` of the dimensions, at
    /// least one.
    pub fn random_fraction(dim: usize, fraction: f64, rng: &mut StdRng) -> Result<Self, RegularizerError> {
        let mut mask: Vec<bool> = (0..dim).map(|_| rng.gen::<f64>() < fraction).collect();
        if !mask.iter().any(|&m| m) {
            let idx = rng.gen_range(0..dim);
            mask[idx] = true;
        }
        FeatureMask::new(mask)
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Number of active entries `s`.
    pub fn ones_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }
}

/// A transformation constrained by the drift loss: the parameterized
/// layer `producer` maps the activation at tracked layer `input_layer`
/// (whose cumulative box protects it) to the pre-activation of tracked
/// layer `output_layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftPair {
    pub producer: usize,
    pub input_layer: usize,
    pub output_layer: usize,
}

/// Pairs consecutive tracked layers with the parameterized layer that
/// produces the later one. The first tracked layer has no protected input
/// and is skipped.
pub fn drift_pairs(net: &Network, tracked: &[usize]) -> Result<Vec<DriftPair>, RegularizerError> {
    if tracked.len() < 2 {
        return Err(RegularizerError::SingleLayerTracked);
    }
    let mut pairs = Vec::with_capacity(tracked.len() - 1);
    for w in tracked.windows(2) {
        let (input_layer, output_layer) = (w[0], w[1]);
        let mut producer = output_layer;
        while matches!(net.layer(producer), Some(Layer::Relu)) {
            if producer == 0 {
                return Err(RegularizerError::DimensionMismatch(format!(
                    "no parameterized layer produces tracked layer {output_layer}"
                )));
            }
            producer -= 1;
        }
        if net.layer(producer).is_none() {
            return Err(RegularizerError::DimensionMismatch(format!(
                "tracked layer {output_layer} out of range"
            )));
        }
        pairs.push(DriftPair {
            producer,
            input_layer,
            output_layer,
        });
    }
    Ok(pairs)
}

/// Unscaled squared-endpoint penalty of an affine update over a box, and
/// its gradients with respect to `dw` and `db`.
///
/// For each output row `i`, with `u_i`/`v_i` the upper/lower interval
/// bound of `dw_i·x` over the box:
///
/// ```text
/// S = Σ_i (u_i + db_i)² + (v_i + db_i)²
/// ```
///
/// At `dw = 0` the positive/negative-part split is non-differentiable;
/// the zero subgradient is used there, as with ReLU.
pub fn affine_drift_penalty(
    dw: &Mat,
    db: &[f64],
    input: &Hypercube,
) -> Result<(f64, Mat, Vec<f64>), RegularizerError> {
    if dw.cols() != input.dim() || dw.rows() != db.len() {
        return Err(RegularizerError::DimensionMismatch(format!(
            "update {}x{}, bias {}, box dim {}",
            dw.rows(),
            dw.cols(),
            db.len(),
            input.dim()
        )));
    }
    let lo = input.lo();
    let hi = input.hi();
    let mut penalty = 0.0;
    let mut grad_w = Mat::zeros(dw.rows(), dw.cols());
    let mut grad_b = vec![0.0; db.len()];
    for i in 0..dw.rows() {
        let row = dw.row(i);
        let mut u = 0.0;
        let mut v = 0.0;
        for ((&w, &l), &h) in row.iter().zip(lo).zip(hi) {
            if w >= 0.0 {
                u += w * h;
                v += w * l;
            } else {
                u += w * l;
                v += w * h;
            }
        }
        let a = u + db[i];
        let b = v + db[i];
        penalty += a * a + b * b;
        grad_b[i] = 2.0 * (a + b);
        let grow = grad_w.row_mut(i);
        for (j, &w) in row.iter().enumerate() {
            grow[j] = if w > 0.0 {
                2.0 * (a * hi[j] + b * lo[j])
            } else if w < 0.0 {
                2.0 * (a * lo[j] + b * hi[j])
            } else {
                0.0
            };
        }
    }
    Ok((penalty, grad_w, grad_b))
}

/// Conv variant of the drift penalty: each output channel's flattened
/// filter update is an affine map of a patch drawn from the per-channel
/// input box, identical at every spatial position. The per-position
/// penalty is therefore multiplied by the number of output positions.
///
/// `channel_box` has one interval per input channel; it is broadcast over
/// the `kernel×kernel` window.
pub fn conv_drift_penalty(
    dw: &[f64],
    db: &[f64],
    in_ch: usize,
    kernel: usize,
    out_positions: usize,
    channel_box: &Hypercube,
) -> Result<(f64, Vec<f64>, Vec<f64>), RegularizerError> {
    if channel_box.dim() != in_ch {
        return Err(RegularizerError::DimensionMismatch(format!(
            "channel box dim {} vs {} input channels",
            channel_box.dim(),
            in_ch
        )));
    }
    let filt = in_ch * kernel * kernel;
    if dw.len() != db.len() * filt {
        return Err(RegularizerError::DimensionMismatch(format!(
            "kernel update of {} values vs {} filters of {}",
            dw.len(),
            db.len(),
            filt
        )));
    }
    // broadcast the per-channel interval over the spatial window
    let mut lo = Vec::with_capacity(filt);
    let mut hi = Vec::with_capacity(filt);
    for c in 0..in_ch {
        for _ in 0..kernel * kernel {
            lo.push(channel_box.lo()[c]);
            hi.push(channel_box.hi()[c]);
        }
    }
    let scale = out_positions as f64;
    let mut penalty = 0.0;
    let mut grad_w = vec![0.0; dw.len()];
    let mut grad_b = vec![0.0; db.len()];
    for i in 0..db.len() {
        let row = &dw[i * filt..(i + 1) * filt];
        let mut u = 0.0;
        let mut v = 0.0;
        for ((&w, &l), &h) in row.iter().zip(&lo).zip(&hi) {
            if w >= 0.0 {
                u += w * h;
                v += w * l;
            } else {
                u += w * l;
                v += w * h;
            }
        }
        let a = u + db[i];
        let b = v + db[i];
        penalty += scale * (a * a + b * b);
        grad_b[i] = scale * 2.0 * (a + b);
        for (j, &w) in row.iter().enumerate() {
            grad_w[i * filt + j] = if w > 0.0 {
                scale * 2.0 * (a * hi[j] + b * lo[j])
            } else if w < 0.0 {
                scale * 2.0 * (a * lo[j] + b * hi[j])
            } else {
                0.0
            };
        }
    }
    Ok((penalty, grad_w, grad_b))
}

/// Batchnorm variant: the frozen-stats layer is an effective per-channel
/// affine map, so the diagonal drift penalty applies to
/// `(ΔW_eff, Δb_eff)`; gradients chain back to `γ` and `β`.
pub fn batchnorm_drift_penalty(
    cur: &Layer,
    snap: &Layer,
    input: &Hypercube,
) -> Result<(f64, Vec<f64>, Vec<f64>), RegularizerError> {
    let (dw_eff, db_eff) = crate::nn::batchnorm_effective_delta(cur, snap)?;
    if input.dim() != dw_eff.len() {
        return Err(RegularizerError::DimensionMismatch(format!(
            "box dim {} vs batchnorm dim {}",
            input.dim(),
            dw_eff.len()
        )));
    }
    let (mean, var, eps) = match cur {
        Layer::BatchNormAffine { mean, var, eps, .. } => (mean, var, *eps),
        _ => unreachable!("effective delta already checked the layer kind"),
    };
    let lo = input.lo();
    let hi = input.hi();
    let mut penalty = 0.0;
    let mut grad_gamma = vec![0.0; dw_eff.len()];
    let mut grad_beta = vec![0.0; dw_eff.len()];
    for j in 0..dw_eff.len() {
        let w = dw_eff[j];
        let (u, v) = if w >= 0.0 {
            (w * hi[j], w * lo[j])
        } else {
            (w * lo[j], w * hi[j])
        };
        let a = u + db_eff[j];
        let b = v + db_eff[j];
        penalty += a * a + b * b;
        let d_dbeff = 2.0 * (a + b);
        let d_dweff = if w > 0.0 {
            2.0 * (a * hi[j] + b * lo[j])
        } else if w < 0.0 {
            2.0 * (a * lo[j] + b * hi[j])
        } else {
            0.0
        };
        let s = (var[j] + eps).sqrt();
        grad_beta[j] = d_dbeff;
        grad_gamma[j] = d_dweff / s - d_dbeff * mean[j] / s;
    }
    Ok((penalty, grad_gamma, grad_beta))
}

/// λ-scaled interval drift loss over every tracked layer beyond the
/// first, dispatching on the kind of the producing layer. Snapshot
/// parameters are constants: gradients flow only into the current
/// network.
pub fn int_drift_loss(
    net: &Network,
    snap: &ParamSnapshot,
    view: &TrackerView,
    tracked: &[usize],
    cfg: &RegularizerConfig,
) -> Result<(f64, Gradients), RegularizerError> {
    let lambda = cfg.effective_lambda_int_drift();
    let pairs = drift_pairs(net, tracked)?;
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(net);
    for pair in &pairs {
        let input_box = view
            .cumulative_prev
            .get(&pair.input_layer)
            .ok_or(RegularizerError::MissingHypercube(pair.input_layer))?;
        match net.layer(pair.producer) {
            Some(Layer::Affine { .. }) => {
                let (dw, db) = snap.delta_affine(net, pair.producer)?;
                let (pen, mut gw, mut gb) = affine_drift_penalty(&dw, &db, input_box)?;
                total += lambda * pen;
                gw.scale(lambda);
                for g in &mut gb {
                    *g *= lambda;
                }
                merge_affine_grad(&mut grads, pair.producer, gw, gb);
            }
            Some(Layer::Conv2d {
                in_ch,
                kernel,
                in_h,
                in_w,
                ..
            }) => {
                let (ic, k) = (*in_ch, *kernel);
                let out_positions = (in_h - k + 1) * (in_w - k + 1);
                let (dw, db) = snap.delta_conv(net, pair.producer)?;
                let (pen, mut gw, mut gb) =
                    conv_drift_penalty(&dw, &db, ic, k, out_positions, input_box)?;
                total += lambda * pen;
                for g in gw.iter_mut().chain(gb.iter_mut()) {
                    *g *= lambda;
                }
                merge_conv_grad(&mut grads, pair.producer, gw, gb);
            }
            Some(Layer::BatchNormAffine { .. }) => {
                let cur = net.layer(pair.producer).unwrap();
                let snap_layer = snap
                    .network()
                    .layer(pair.producer)
                    .ok_or(NnError::MissingLayer(pair.producer))?;
                let (pen, mut gg, mut gb) = batchnorm_drift_penalty(cur, snap_layer, input_box)?;
                total += lambda * pen;
                for g in gg.iter_mut().chain(gb.iter_mut()) {
                    *g *= lambda;
                }
                merge_batchnorm_grad(&mut grads, pair.producer, gg, gb);
            }
            _ => {
                return Err(RegularizerError::DimensionMismatch(format!(
                    "layer {} cannot be drift-constrained",
                    pair.producer
                )))
            }
        }
    }
    Ok((total, grads))
}

fn merge_affine_grad(grads: &mut Gradients, layer: usize, gw: Mat, gb: Vec<f64>) {
    match &mut grads.layers[layer] {
        LayerGrad::Affine { dw, db } => {
            dw.add_assign(&gw);
            for (d, g) in db.iter_mut().zip(gb) {
                *d += g;
            }
        }
        _ => unreachable!(),
    }
}

fn merge_conv_grad(grads: &mut Gradients, layer: usize, gw: Vec<f64>, gb: Vec<f64>) {
    match &mut grads.layers[layer] {
        LayerGrad::Conv2d { dw, db } => {
            for (d, g) in dw.iter_mut().zip(gw) {
                *d += g;
            }
            for (d, g) in db.iter_mut().zip(gb) {
                *d += g;
            }
        }
        _ => unreachable!(),
    }
}

fn merge_batchnorm_grad(grads: &mut Gradients, layer: usize, gg: Vec<f64>, gb: Vec<f64>) {
    match &mut grads.layers[layer] {
        LayerGrad::BatchNormAffine { dgamma, dbeta } => {
            for (d, g) in dgamma.iter_mut().zip(gg) {
                *d += g;
            }
            for (d, g) in dbeta.iter_mut().zip(gb) {
                *d += g;
            }
        }
        _ => unreachable!(),
    }
}

/// λ-scaled batch dispersion of each tracked activation, plus the
/// activation-space gradients to inject at those layers.
///
/// Per layer: `V = (1/N)·Σ_i ‖a_i − ā‖²`; the gradient with respect to
/// `a_i` is `2(a_i − ā)/N` — the mean-shift term cancels because the
/// deviations sum to zero.
pub fn var_loss(
    cache: &ForwardCache,
    tracked: &[usize],
    lambda: f64,
) -> Result<(f64, Vec<(usize, Mat)>), RegularizerError> {
    let n = cache.input().rows();
    if n < 2 {
        return Err(RegularizerError::BatchTooSmall(n));
    }
    let nf = n as f64;
    let mut total = 0.0;
    let mut taps = Vec::with_capacity(tracked.len());
    for &l in tracked {
        let act = cache.act(l);
        let d = act.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &a) in mean.iter_mut().zip(act.row(i)) {
                *m += a;
            }
        }
        for m in &mut mean {
            *m /= nf;
        }
        let mut dispersion = 0.0;
        let mut grad = Mat::zeros(n, d);
        for i in 0..n {
            let row = act.row(i);
            let grow = grad.row_mut(i);
            for j in 0..d {
                let dev = row[j] - mean[j];
                dispersion += dev * dev;
                grow[j] = lambda * 2.0 * dev / nf;
            }
        }
        total += lambda * dispersion / nf;
        taps.push((l, grad));
    }
    Ok((total, taps))
}

/// λ-scaled alignment loss: squared distance between the batch-mean
/// activation (the online center estimate) and the previous task's box
/// center, divided by that box's mean radius plus a stabilizer.
pub fn align_loss(
    cache: &ForwardCache,
    tracked: &[usize],
    view: &TrackerView,
    lambda: f64,
    eps: f64,
) -> Result<(f64, Vec<(usize, Mat)>), RegularizerError> {
    let n = cache.input().rows();
    if n == 0 {
        return Err(RegularizerError::BatchTooSmall(0));
    }
    let nf = n as f64;
    let mut total = 0.0;
    let mut taps = Vec::with_capacity(tracked.len());
    for &l in tracked {
        let prev = view
            .prev_task
            .get(&l)
            .ok_or(RegularizerError::MissingHypercube(l))?;
        let act = cache.act(l);
        let d = act.cols();
        if prev.center.len() != d {
            return Err(RegularizerError::DimensionMismatch(format!(
                "layer {l}: previous center dim {} vs activation width {d}",
                prev.center.len()
            )));
        }
        let mut center = vec![0.0; d];
        for i in 0..n {
            for (c, &a) in center.iter_mut().zip(act.row(i)) {
                *c += a;
            }
        }
        for c in &mut center {
            *c /= nf;
        }
        let denom = prev.mean_radius + eps;
        let mut dist2 = 0.0;
        let mut coeff = vec![0.0; d];
        for j in 0..d {
            let delta = center[j] - prev.center[j];
            dist2 += delta * delta;
            coeff[j] = lambda * 2.0 * delta / (denom * nf);
        }
        total += lambda * dist2 / denom;
        let mut grad = Mat::zeros(n, d);
        for i in 0..n {
            grad.row_mut(i).copy_from_slice(&coeff);
        }
        taps.push((l, grad));
    }
    Ok((total, taps))
}

/// λ-scaled masked distillation between current and frozen previous-task
/// features, normalized by the number of active mask entries. Returns the
/// loss and the gradient with respect to `cur`.
pub fn feat_distill_loss(
    cur: &Mat,
    prev: &Mat,
    mask: &FeatureMask,
    lambda: f64,
    eps: f64,
) -> Result<(f64, Mat), RegularizerError> {
    if cur.rows() != prev.rows() || cur.cols() != prev.cols() {
        return Err(RegularizerError::DimensionMismatch(format!(
            "current features {}x{} vs previous {}x{}",
            cur.rows(),
            cur.cols(),
            prev.rows(),
            prev.cols()
        )));
    }
    if mask.len() != cur.cols() {
        return Err(RegularizerError::DimensionMismatch(format!(
            "mask of {} entries vs {} feature dims",
            mask.len(),
            cur.cols()
        )));
    }
    let s = mask.ones_count();
    if s == 0 {
        return Err(RegularizerError::MaskAllZero);
    }
    let n = cur.rows() as f64;
    let denom = s as f64 + eps;
    let scale = lambda / (n * denom);
    let mut loss = 0.0;
    let mut grad = Mat::zeros(cur.rows(), cur.cols());
    for i in 0..cur.rows() {
        let crow = cur.row(i);
        let prow = prev.row(i);
        let grow = grad.row_mut(i);
        for (j, &on) in mask.as_slice().iter().enumerate() {
            if on {
                let diff = crow[j] - prow[j];
                loss += scale * diff * diff;
                grow[j] = scale * 2.0 * diff;
            }
        }
    }
    Ok((loss, grad))
}

/// Sum of the task loss and any active regularizer outputs; gradients
/// merge by elementwise addition.
pub fn total_loss(
    task: (f64, Gradients),
    components: Vec<(f64, Gradients)>,
) -> (f64, Gradients) {
    let (mut total, mut grads) = task;
    for (value, g) in components {
        total += value;
        grads.add_assign(&g);
    }
    (total, grads)
}

// Self-contained evaluation paths: each runs its own forward/backward and
// returns (value, parameter gradients). The fused trainer folds all tap
// gradients into one backward pass instead; both routes must agree, which
// the consistency tests pin down.

pub fn var_loss_on_batch(
    net: &Network,
    x: &Mat,
    tracked: &[usize],
    lambda: f64,
) -> Result<(f64, Gradients), RegularizerError> {
    let cache = net.forward(x)?;
    let (value, taps) = var_loss(&cache, tracked, lambda)?;
    let head = Mat::zeros(cache.output().rows(), cache.output().cols());
    let grads = net.backward(&cache, &head, &taps)?;
    Ok((value, grads))
}

pub fn align_loss_on_batch(
    net: &Network,
    x: &Mat,
    tracked: &[usize],
    view: &TrackerView,
    lambda: f64,
    eps: f64,
) -> Result<(f64, Gradients), RegularizerError> {
    let cache = net.forward(x)?;
    let (value, taps) = align_loss(&cache, tracked, view, lambda, eps)?;
    let head = Mat::zeros(cache.output().rows(), cache.output().cols());
    let grads = net.backward(&cache, &head, &taps)?;
    Ok((value, grads))
}

/// Distillation against the frozen snapshot's features at `feat_layer`,
/// evaluated on the same inputs.
pub fn feat_distill_on_batch(
    net: &Network,
    snap: &ParamSnapshot,
    x: &Mat,
    feat_layer: usize,
    mask: &FeatureMask,
    lambda: f64,
    eps: f64,
) -> Result<(f64, Gradients), RegularizerError> {
    let cache = net.forward(x)?;
    let prev_cache = snap.network().forward(x)?;
    let (value, tap) = feat_distill_loss(
        cache.act(feat_layer),
        prev_cache.act(feat_layer),
        mask,
        lambda,
        eps,
    )?;
    let head = Mat::zeros(cache.output().rows(), cache.output().cols());
    let grads = net.backward(&cache, &head, &[(feat_layer, tap)])?;
    Ok((value, grads))
}
