//! Closed-interval arithmetic over `f64`.
//!
//! Scalars ([`Interval`]), axis-aligned boxes ([`Hypercube`]), interval
//! matrices and interval convolutions, plus [`linear_map_bounds`]: the exact
//! range of an affine map `W·x + b` over a box, computed from the
//! elementwise positive and negative parts of each weight row.
//!
//! Arithmetic is plain `f64` with round-to-nearest; results are rigorous
//! enclosures only up to floating-point rounding error. Outward (directed)
//! rounding is deliberately not used: these values feed optimization
//! objectives, not certified proofs.

use crate::linalg::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IntervalError {
    #[error("interval endpoint is not finite (lo={lo}, hi={hi})")]
    NonFiniteEndpoint { lo: f64, hi: f64 },
    #[error("lower endpoint {lo} exceeds upper endpoint {hi}")]
    InvertedEndpoints { lo: f64, hi: f64 },
    #[error("divisor interval [{lo}, {hi}] contains zero")]
    DivisorContainsZero { lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A closed, bounded range `[lo, hi]` with finite endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval", into = "RawInterval")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

#[derive(Serialize, Deserialize)]
struct RawInterval {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawInterval> for Interval {
    type Error = IntervalError;
    fn try_from(raw: RawInterval) -> Result<Self, IntervalError> {
        Interval::new(raw.lo, raw.hi)
    }
}

impl From<Interval> for RawInterval {
    fn from(iv: Interval) -> Self {
        RawInterval { lo: iv.lo, hi: iv.hi }
    }
}

impl Interval {
    /// Fails on NaN or infinite endpoints and on `lo > hi`; upstream
    /// numerical blowups surface here instead of being clamped away.
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(IntervalError::NonFiniteEndpoint { lo, hi });
        }
        if lo > hi {
            return Err(IntervalError::InvertedEndpoints { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// Degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Result<Self, IntervalError> {
        Interval::new(x, x)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// `[a.lo + b.lo, a.hi + b.hi]`.
    pub fn add(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    /// `[a.lo − b.hi, a.hi − b.lo]`. Note `x.sub(x)` widens to `[−w, w]`
    /// for an interval of width `w`: each occurrence of the operand is
    /// treated independently.
    pub fn sub(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo - other.hi,
            hi: self.hi - other.lo,
        }
    }

    /// Min/max over the four endpoint products.
    pub fn mul(&self, other: &Interval) -> Interval {
        let p1 = self.lo * other.lo;
        let p2 = self.lo * other.hi;
        let p3 = self.hi * other.lo;
        let p4 = self.hi * other.hi;
        Interval {
            lo: p1.min(p2).min(p3).min(p4),
            hi: p1.max(p2).max(p3).max(p4),
        }
    }

    /// Multiplication by the reciprocal `[1/b.hi, 1/b.lo]`; the divisor
    /// must not contain zero.
    pub fn div(&self, other: &Interval) -> Result<Interval, IntervalError> {
        if other.lo <= 0.0 && 0.0 <= other.hi {
            return Err(IntervalError::DivisorContainsZero {
                lo: other.lo,
                hi: other.hi,
            });
        }
        let recip = Interval {
            lo: 1.0 / other.hi,
            hi: 1.0 / other.lo,
        };
        Ok(self.mul(&recip))
    }

    /// Smallest interval containing both operands.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

impl std::ops::Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::add(&self, &rhs)
    }
}

impl std::ops::Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::sub(&self, &rhs)
    }
}

impl std::ops::Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        Interval::mul(&self, &rhs)
    }
}

/// Axis-aligned box: one closed interval per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHypercube", into = "RawHypercube")]
pub struct Hypercube {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawHypercube {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawHypercube> for Hypercube {
    type Error = IntervalError;
    fn try_from(raw: RawHypercube) -> Result<Self, IntervalError> {
        Hypercube::new(raw.lo, raw.hi)
    }
}

impl From<Hypercube> for RawHypercube {
    fn from(h: Hypercube) -> Self {
        RawHypercube { lo: h.lo, hi: h.hi }
    }
}

impl Hypercube {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, IntervalError> {
        if lo.len() != hi.len() {
            return Err(IntervalError::DimensionMismatch(format!(
                "lo has {} dims, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.is_empty() {
            return Err(IntervalError::DimensionMismatch(
                "hypercube must have at least one dimension".into(),
            ));
        }
        for (&l, &h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() {
                return Err(IntervalError::NonFiniteEndpoint { lo: l, hi: h });
            }
            if l > h {
                return Err(IntervalError::InvertedEndpoints { lo: l, hi: h });
            }
        }
        Ok(Hypercube { lo, hi })
    }

    pub fn from_intervals(ivs: &[Interval]) -> Result<Self, IntervalError> {
        Hypercube::new(
            ivs.iter().map(|iv| iv.lo).collect(),
            ivs.iter().map(|iv| iv.hi).collect(),
        )
    }

    /// Degenerate box `[x, x]` around a point.
    pub fn point(x: &[f64]) -> Result<Self, IntervalError> {
        Hypercube::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn interval(&self, j: usize) -> Interval {
        Interval {
            lo: self.lo[j],
            hi: self.hi[j],
        }
    }

    /// `(hi + lo) / 2` per dimension.
    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// `(hi − lo) / 2` per dimension.
    pub fn radius(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    /// Mean of the per-dimension radii.
    pub fn mean_radius(&self) -> f64 {
        let d = self.dim() as f64;
        self.radius().iter().sum::<f64>() / d
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn contains(&self, other: &Hypercube) -> bool {
        self.dim() == other.dim()
            && self
                .lo
                .iter()
                .zip(&other.lo)
                .all(|(outer, inner)| outer <= inner)
            && self
                .hi
                .iter()
                .zip(&other.hi)
                .all(|(outer, inner)| outer >= inner)
    }

    /// Elementwise min of lower bounds, max of upper bounds. This is the
    /// cumulative expansion rule: gaps between disjoint operand boxes are
    /// absorbed into the result.
    pub fn merge(&self, other: &Hypercube) -> Result<Hypercube, IntervalError> {
        if self.dim() != other.dim() {
            return Err(IntervalError::DimensionMismatch(format!(
                "{} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Hypercube {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        })
    }
}

/// Exact range of `dW·x + db` for `x` in `input`.
///
/// Per output row `i`, with `(v)⁺ = max(0, v)` and `(v)⁻ = max(0, −v)`
/// taken elementwise over the row:
///
/// ```text
/// lo[i] = (dW_i)⁺·input.lo − (dW_i)⁻·input.hi + db[i]
/// hi[i] = (dW_i)⁺·input.hi − (dW_i)⁻·input.lo + db[i]
/// ```
///
/// Each input coordinate occurs once per row, so there is no dependency
/// widening: the bounds equal the vertex-enumeration min/max.
pub fn linear_map_bounds(
    dw: &Mat,
    db: &[f64],
    input: &Hypercube,
) -> Result<Hypercube, IntervalError> {
    if dw.cols() != input.dim() || dw.rows() != db.len() {
        return Err(IntervalError::DimensionMismatch(format!(
            "weights {}x{}, bias {}, box dim {}",
            dw.rows(),
            dw.cols(),
            db.len(),
            input.dim()
        )));
    }
    let mut lo = Vec::with_capacity(dw.rows());
    let mut hi = Vec::with_capacity(dw.rows());
    for i in 0..dw.rows() {
        let (l, h) = affine_row_bounds(dw.row(i), input.lo(), input.hi());
        lo.push(l + db[i]);
        hi.push(h + db[i]);
    }
    Hypercube::new(lo, hi)
}

/// Bounds of `w·x` over `x ∈ [lo, hi]` for a single row `w`.
pub(crate) fn affine_row_bounds(w: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut out_lo = 0.0;
    let mut out_hi = 0.0;
    for ((&wj, &lj), &hj) in w.iter().zip(lo).zip(hi) {
        if wj >= 0.0 {
            out_lo += wj * lj;
            out_hi += wj * hj;
        } else {
            out_lo += wj * hj;
            out_hi += wj * lj;
        }
    }
    (out_lo, out_hi)
}

/// Matrix with interval entries.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Interval>) -> Result<Self, IntervalError> {
        if data.len() != rows * cols {
            return Err(IntervalError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(IntervalMatrix { rows, cols, data })
    }

    /// Degenerate interval matrix from point values.
    pub fn from_points(m: &Mat) -> Self {
        IntervalMatrix {
            rows: m.rows(),
            cols: m.cols(),
            data: m.iter().map(|&x| Interval { lo: x, hi: x }).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Interval {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Interval) {
        self.data[r * self.cols + c] = v;
    }

    /// Interval extension of the matrix product: each entry is a sum of
    /// interval products accumulated by interval addition. Subject to the
    /// dependency problem when entries share underlying variables.
    pub fn matmul(&self, other: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        if self.cols != other.rows {
            return Err(IntervalError::DimensionMismatch(format!(
                "{}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Interval { lo: 0.0, hi: 0.0 };
                for k in 0..self.cols {
                    acc = acc.add(&self.get(i, k).mul(&other.get(k, j)));
                }
                data.push(acc);
            }
        }
        IntervalMatrix::new(self.rows, other.cols, data)
    }
}

/// Interval 2D convolution: stride 1, no padding.
///
/// `input` is one interval matrix per input channel, `kernels[o][c]` the
/// `k×k` interval filter applied to channel `c` for output channel `o`,
/// `bias[o]` the output-channel bias. Each output entry is the interval
/// dot product of the kernel with its patch, plus the bias.
pub fn interval_conv2d(
    input: &[IntervalMatrix],
    kernels: &[Vec<IntervalMatrix>],
    bias: &[Interval],
) -> Result<Vec<IntervalMatrix>, IntervalError> {
    if input.is_empty() || kernels.is_empty() {
        return Err(IntervalError::DimensionMismatch(
            "empty input or kernel set".into(),
        ));
    }
    if kernels.len() != bias.len() {
        return Err(IntervalError::DimensionMismatch(format!(
            "{} kernels but {} biases",
            kernels.len(),
            bias.len()
        )));
    }
    let in_h = input[0].rows();
    let in_w = input[0].cols();
    if input.iter().any(|m| m.rows() != in_h || m.cols() != in_w) {
        return Err(IntervalError::DimensionMismatch(
            "input channels differ in shape".into(),
        ));
    }
    let k = kernels[0][0].rows();
    for per_out in kernels {
        if per_out.len() != input.len() {
            return Err(IntervalError::DimensionMismatch(format!(
                "kernel expects {} input channels, input has {}",
                per_out.len(),
                input.len()
            )));
        }
        if per_out.iter().any(|f| f.rows() != k || f.cols() != k) {
            return Err(IntervalError::DimensionMismatch(
                "kernel filters differ in shape".into(),
            ));
        }
    }
    if k > in_h || k > in_w {
        return Err(IntervalError::DimensionMismatch(format!(
            "{k}x{k} kernel does not fit {in_h}x{in_w} input"
        )));
    }
    let out_h = in_h - k + 1;
    let out_w = in_w - k + 1;
    let mut out = Vec::with_capacity(kernels.len());
    for (per_out, &b) in kernels.iter().zip(bias) {
        let mut data = Vec::with_capacity(out_h * out_w);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = Interval { lo: 0.0, hi: 0.0 };
                for (ch, filt) in input.iter().zip(per_out) {
                    for ky in 0..k {
                        for kx in 0..k {
                            acc = acc.add(&ch.get(oy + ky, ox + kx).mul(&filt.get(ky, kx)));
                        }
                    }
                }
                data.push(acc.add(&b));
            }
        }
        out.push(IntervalMatrix::new(out_h, out_w, data)?);
    }
    Ok(out)
}

/// Exact min/max of `w·x + b` over all `2^d` corners of a box. Ground
/// truth for bound tightness; exponential in `d`, test-scale only.
pub fn vertex_enumeration_bounds(w: &[f64], b: f64, lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let d = w.len();
    assert!(d <= 24, "vertex enumeration is exponential in dimension");
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for mask in 0u32..(1 << d) {
        let mut acc = b;
        for (j, wj) in w.iter().enumerate() {
            let x = if mask & (1 << j) != 0 { hi[j] } else { lo[j] };
            acc += wj * x;
        }
        min = min.min(acc);
        max = max.max(acc);
    }
    (min, max)
}
