use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Real, VideoTensor};

/// How the second operand of a binary op maps onto the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Equal dims.
    None,
    /// `H = W = 1`: one value per `(n, t, c)`, shared by every pixel.
    Spatial,
    /// `C = 1`: one value per site, shared by every channel.
    Channel,
}

impl Broadcast {
    pub fn resolve(a: Dims, b: Dims) -> Result<Self> {
        if a == b {
            Ok(Broadcast::None)
        } else if b.h == 1 && b.w == 1 && (b.n, b.t, b.c) == (a.n, a.t, a.c) {
            Ok(Broadcast::Spatial)
        } else if b.c == 1 && (b.n, b.t, b.h, b.w) == (a.n, a.t, a.h, a.w) {
            Ok(Broadcast::Channel)
        } else {
            shape_err(format!("{b:?} does not broadcast onto {a:?}"))
        }
    }

    /// Index into the broadcast operand for flat index `i` of the full operand.
    #[inline]
    fn index(self, a: Dims, i: usize) -> usize {
        match self {
            Broadcast::None => i,
            Broadcast::Channel => i / a.c,
            Broadcast::Spatial => {
                let c = i % a.c;
                let frame = i / (a.h * a.w * a.c);
                frame * a.c + c
            }
        }
    }
}

fn zip_broadcast(a: &VideoTensor, b: &VideoTensor, f: impl Fn(Real, Real) -> Real) -> Result<VideoTensor> {
    let mode = Broadcast::resolve(a.dims(), b.dims())?;
    let ad = a.dims();
    let bd = b.data();
    let out = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[mode.index(ad, i)]))
        .collect();
    Ok(VideoTensor::from_parts_unchecked(ad, out))
}

/// Elementwise product, `b` broadcast per [`Broadcast`].
pub fn hadamard(a: &VideoTensor, b: &VideoTensor) -> Result<VideoTensor> {
    zip_broadcast(a, b, |x, y| x * y)
}

pub fn add(a: &VideoTensor, b: &VideoTensor) -> Result<VideoTensor> {
    zip_broadcast(a, b, |x, y| x + y)
}

pub fn scale(a: &VideoTensor, s: Real) -> VideoTensor {
    map(a, |x| x * s)
}

pub fn map(a: &VideoTensor, f: impl Fn(Real) -> Real) -> VideoTensor {
    VideoTensor::from_parts_unchecked(a.dims(), a.data().iter().map(|&x| f(x)).collect())
}

#[inline]
pub fn sigmoid_scalar(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &VideoTensor) -> VideoTensor {
    map(a, sigmoid_scalar)
}

pub fn relu(a: &VideoTensor) -> VideoTensor {
    map(a, |x| x.max(0.0))
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(v: &[Real]) -> Vec<Real> {
    let m = v.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let e: Vec<Real> = v.iter().map(|&x| (x - m).exp()).collect();
    let z: Real = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Vector-Jacobian product of softmax at output `y`.
pub fn softmax_backward(y: &[Real], dy: &[Real]) -> Vec<Real> {
    let dot: Real = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(&yi, &gi)| yi * (gi - dot)).collect()
}

/// Gradients of a broadcast binary op with respect to the broadcast operand:
/// sums `g` over the axes `b` was expanded along.
pub(crate) fn reduce_to(g: &[Real], full: Dims, mode: Broadcast, target: Dims) -> Vec<Real> {
    let mut out = vec![0.0; target.len()];
    for (i, &v) in g.iter().enumerate() {
        out[mode.index(full, i)] += v;
    }
    out
}

/// `y = x * scale[c] + shift[c]`.
pub fn affine(x: &VideoTensor, scale: &[Real], shift: &[Real]) -> Result<VideoTensor> {
    let d = x.dims();
    if scale.len() != d.c || shift.len() != d.c {
        return shape_err(format!("affine of width {} applied to {d:?}", scale.len()));
    }
    let mut out = Vec::with_capacity(d.len());
    for row in x.data().chunks_exact(d.c) {
        out.extend(row.iter().zip(scale).zip(shift).map(|((v, s), b)| v * s + b));
    }
    Ok(VideoTensor::from_parts_unchecked(d, out))
}

/// Softmax cross-entropy of one logit row against `label`: returns the loss and
/// its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[Real], label: usize) -> (Real, Vec<Real>) {
    let p = softmax(logits);
    let loss = -(p[label].max(Real::MIN_POSITIVE)).ln();
    let mut g = p;
    g[label] -= 1.0;
    (loss, g)
}
