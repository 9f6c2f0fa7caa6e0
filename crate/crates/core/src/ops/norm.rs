use crate::tensor::{Real, VideoTensor};

pub const NORM_EPS: Real = 1e-5;

/// Per-channel mean and biased variance over every `(n, t, h, w)` site.
pub fn channel_stats(x: &VideoTensor) -> (Vec<Real>, Vec<Real>) {
    let c = x.dims().c;
    let m = x.dims().sites() as Real;
    let mut mean = vec![0.0; c];
    for row in x.data().chunks_exact(c) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; c];
    for row in x.data().chunks_exact(c) {
        for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|s| *s /= m);
    (mean, var)
}

pub fn inv_std(var: &[Real]) -> Vec<Real> {
    var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect()
}

/// `(x - mean) * inv_std`, per channel.
pub fn normalize(x: &VideoTensor, mean: &[Real], inv_std: &[Real]) -> VideoTensor {
    let c = x.dims().c;
    let mut out = Vec::with_capacity(x.data().len());
    for row in x.data().chunks_exact(c) {
        for k in 0..c {
            out.push((row[k] - mean[k]) * inv_std[k]);
        }
    }
    VideoTensor::from_parts_unchecked(x.dims(), out)
}

/// Adjoint of batch-statistics normalization, given its output `y`.
pub fn batch_norm_backward(y: &VideoTensor, inv_std: &[Real], dy: &VideoTensor) -> VideoTensor {
    let c = y.dims().c;
    let m = y.dims().sites() as Real;
    let (mut g_mean, mut gy_mean) = (vec![0.0; c], vec![0.0; c]);
    for (yrow, grow) in y.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for k in 0..c {
            g_mean[k] += grow[k] / m;
            gy_mean[k] += grow[k] * yrow[k] / m;
        }
    }
    let mut dx = Vec::with_capacity(y.data().len());
    for (yrow, grow) in y.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for k in 0..c {
            dx.push(inv_std[k] * (grow[k] - g_mean[k] - yrow[k] * gy_mean[k]));
        }
    }
    VideoTensor::from_parts_unchecked(y.dims(), dx)
}
