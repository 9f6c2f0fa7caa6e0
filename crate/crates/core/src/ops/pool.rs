use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Real, VideoTensor};

/// Per-site mean and max over channels: output channel 0 is the mean, 1 the max.
pub fn channel_pool(x: &VideoTensor) -> VideoTensor {
    channel_pool_with_argmax(x).0
}

/// [`channel_pool`] plus the winning channel of each site (first on ties).
pub(crate) fn channel_pool_with_argmax(x: &VideoTensor) -> (VideoTensor, Vec<usize>) {
    let d = x.dims();
    let mut out = Vec::with_capacity(d.sites() * 2);
    let mut arg = Vec::with_capacity(d.sites());
    for row in x.data().chunks_exact(d.c) {
        let mut best = 0;
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            sum += v;
            if v > row[best] {
                best = c;
            }
        }
        out.push(sum / d.c as Real);
        out.push(row[best]);
        arg.push(best);
    }
    (VideoTensor::from_parts_unchecked(d.with_c(2), out), arg)
}

pub(crate) fn channel_pool_backward(dy: &VideoTensor, argmax: &[usize], input: Dims) -> VideoTensor {
    let c = input.c;
    let mut dx = vec![0.0; input.len()];
    for (s, g) in dy.data().chunks_exact(2).enumerate() {
        let row = &mut dx[s * c..(s + 1) * c];
        let share = g[0] / c as Real;
        row.iter_mut().for_each(|v| *v = share);
        row[argmax[s]] += g[1];
    }
    VideoTensor::from_parts_unchecked(input, dx)
}

/// Mean over `H × W`, giving `(N, T, 1, 1, C)`.
pub fn spatial_pool(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    let plane = d.h * d.w;
    let mut out = vec![0.0; d.n * d.t * d.c];
    for (f, frame) in x.data().chunks_exact(plane * d.c).enumerate() {
        let acc = &mut out[f * d.c..(f + 1) * d.c];
        for row in frame.chunks_exact(d.c) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= plane as Real);
    }
    VideoTensor::from_parts_unchecked(Dims::new(d.n, d.t, 1, 1, d.c), out)
}

pub(crate) fn spatial_pool_backward(dy: &VideoTensor, input: Dims) -> VideoTensor {
    let plane = input.h * input.w;
    let c = input.c;
    let mut dx = Vec::with_capacity(input.len());
    for g in dy.data().chunks_exact(c) {
        for _ in 0..plane {
            dx.extend(g.iter().map(|v| v / plane as Real));
        }
    }
    VideoTensor::from_parts_unchecked(input, dx)
}

/// Mean over `T × H × W`, giving `(N, 1, 1, 1, C)`.
pub fn global_pool(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    let per = d.t * d.h * d.w;
    let mut out = vec![0.0; d.n * d.c];
    for n in 0..d.n {
        let acc = &mut out[n * d.c..(n + 1) * d.c];
        for row in x.data()[n * per * d.c..(n + 1) * per * d.c].chunks_exact(d.c) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= per as Real);
    }
    VideoTensor::from_parts_unchecked(Dims::new(d.n, 1, 1, 1, d.c), out)
}

pub(crate) fn global_pool_backward(dy: &VideoTensor, input: Dims) -> VideoTensor {
    let per = input.t * input.h * input.w;
    let c = input.c;
    let mut dx = Vec::with_capacity(input.len());
    for g in dy.data().chunks_exact(c) {
        for _ in 0..per {
            dx.extend(g.iter().map(|v| v / per as Real));
        }
    }
    VideoTensor::from_parts_unchecked(input, dx)
}

/// Per-frame spatial max pooling with a square window, zero-free padding (padded taps
/// are skipped), as in the ResNet stem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool2d {
    pub fn output_dims(&self, x: Dims) -> Result<Dims> {
        let f = |len: usize| {
            let padded = len + 2 * self.padding;
            (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
        };
        match (f(x.h), f(x.w)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok(Dims { h, w, ..x }),
            _ => shape_err(format!("max pool {self:?} leaves no output for {x:?}")),
        }
    }

    /// Pooled tensor and, for each output element, the flat input index it came from.
    pub(crate) fn forward(&self, x: &VideoTensor) -> Result<(VideoTensor, Vec<usize>)> {
        let d = x.dims();
        let od = self.output_dims(d)?;
        let mut out = Vec::with_capacity(od.len());
        let mut arg = Vec::with_capacity(od.len());
        for n in 0..d.n {
            for t in 0..d.t {
                for oh in 0..od.h {
                    for ow in 0..od.w {
                        for c in 0..d.c {
                            let mut best: Option<(usize, Real)> = None;
                            for kh in 0..self.kernel {
                                for kw in 0..self.kernel {
                                    let ih = (oh * self.stride + kh) as isize - self.padding as isize;
                                    let iw = (ow * self.stride + kw) as isize - self.padding as isize;
                                    if ih < 0 || iw < 0 || ih as usize >= d.h || iw as usize >= d.w {
                                        continue;
                                    }
                                    let idx = d.offset(n, t, ih as usize, iw as usize, c);
                                    let v = x.data()[idx];
                                    if best.is_none_or(|(_, b)| v > b) {
                                        best = Some((idx, v));
                                    }
                                }
                            }
                            let (idx, v) = best.expect("window overlaps the input");
                            out.push(v);
                            arg.push(idx);
                        }
                    }
                }
            }
        }
        Ok((VideoTensor::from_parts_unchecked(od, out), arg))
    }

    pub(crate) fn backward(dy: &VideoTensor, argmax: &[usize], input: Dims) -> VideoTensor {
        let mut dx = vec![0.0; input.len()];
        for (g, &i) in dy.data().iter().zip(argmax) {
            dx[i] += g;
        }
        VideoTensor::from_parts_unchecked(input, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_pool_duplicates_input() {
        let x = VideoTensor::from_fn(Dims::new(1, 2, 2, 2, 1), |_, t, h, w, _| (t * 4 + h * 2 + w) as Real).unwrap();
        let y = channel_pool(&x);
        for s in 0..8 {
            assert_eq!(y.data()[2 * s], x.data()[s]);
            assert_eq!(y.data()[2 * s + 1], x.data()[s]);
        }
    }

    #[test]
    fn channel_ramp_mean_and_max() {
        let x = VideoTensor::from_fn(Dims::new(1, 2, 3, 3, 4), |_, _, _, _, c| c as Real).unwrap();
        let y = channel_pool(&x);
        for pair in y.data().chunks_exact(2) {
            assert_eq!(pair, &[1.5, 3.0]);
        }
    }

    #[test]
    fn unit_plane_spatial_pool_is_identity() {
        let x = VideoTensor::from_fn(Dims::new(2, 3, 1, 1, 4), |n, t, _, _, c| (n + t * c) as Real).unwrap();
        assert_eq!(spatial_pool(&x), x);
    }

    #[test]
    fn checkerboard_spatial_pool() {
        let x = VideoTensor::from_fn(Dims::new(1, 2, 4, 6, 3), |_, _, h, w, _| if (h + w) % 2 == 0 { 0.0 } else { 2.0 }).unwrap();
        assert!(spatial_pool(&x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn resnet_stem_pool_shape() {
        let p = MaxPool2d { kernel: 3, stride: 2, padding: 1 };
        assert_eq!(p.output_dims(Dims::new(1, 8, 112, 112, 64)).unwrap(), Dims::new(1, 8, 56, 56, 64));
    }
}
