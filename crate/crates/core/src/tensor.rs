//! Dense rank-5 video feature maps in `(N, T, H, W, C)` row-major layout.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Extents of a [`VideoTensor`]: batch, frames, height, width, channels.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub const fn new(n: usize, t: usize, h: usize, w: usize, c: usize) -> Self {
        Dims { n, t, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.n * self.t * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `(n, t, h, w)` sites, i.e. `len() / c`.
    pub fn sites(&self) -> usize {
        self.n * self.t * self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Dims { c, ..self }
    }

    #[inline]
    pub fn offset(&self, n: usize, t: usize, h: usize, w: usize, c: usize) -> usize {
        (((n * self.t + t) * self.h + h) * self.w + w) * self.c + c
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.n, self.t, self.h, self.w, self.c]
    }

    fn validate(&self) -> Result<()> {
        if self.as_array().contains(&0) {
            return shape_err(format!("all dims must be >= 1, got {self:?}"));
        }
        Ok(())
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.n, self.t, self.h, self.w, self.c)
    }
}

#[derive(Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    data: Vec<Real>,
}

impl fmt::Debug for VideoTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VideoTensor")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

impl VideoTensor {
    pub fn from_vec(dims: Dims, data: Vec<Real>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return shape_err(format!(
                "data length {} does not match dims {:?} ({})",
                data.len(),
                dims,
                dims.len()
            ));
        }
        Ok(VideoTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: Dims, value: Real) -> Result<Self> {
        dims.validate()?;
        Ok(VideoTensor {
            dims,
            data: vec![value; dims.len()],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize, usize) -> Real) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for t in 0..dims.t {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        for c in 0..dims.c {
                            data.push(f(n, t, h, w, c));
                        }
                    }
                }
            }
        }
        Ok(VideoTensor { dims, data })
    }

    /// Standard normal entries scaled by `scale`.
    pub fn randn(dims: Dims, scale: Real, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let data = (0..dims.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z as Real * scale
            })
            .collect();
        Ok(VideoTensor { dims, data })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(dims: Dims, lo: Real, hi: Real, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let data = (0..dims.len()).map(|_| rng.random_range(lo..hi)).collect();
        Ok(VideoTensor { dims, data })
    }

    pub(crate) fn from_parts_unchecked(dims: Dims, data: Vec<Real>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        VideoTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, t: usize, h: usize, w: usize, c: usize) -> Real {
        self.data[self.dims.offset(n, t, h, w, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, t: usize, h: usize, w: usize, c: usize) -> &mut Real {
        let o = self.dims.offset(n, t, h, w, c);
        &mut self.data[o]
    }

    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    /// Copy of batch item `n` as a tensor with batch size 1.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if n >= self.dims.n {
            return shape_err(format!("batch index {n} out of range for {:?}", self.dims));
        }
        let per = self.dims.len() / self.dims.n;
        let dims = Dims { n: 1, ..self.dims };
        Ok(Self::from_parts_unchecked(
            dims,
            self.data[n * per..(n + 1) * per].to_vec(),
        ))
    }

    /// Stack batch-1 (or any batch) tensors along the batch axis.
    pub fn stack_batch<T: std::borrow::Borrow<VideoTensor>>(items: &[T]) -> Result<Self> {
        let first = match items.first() {
            Some(f) => f.borrow().dims,
            None => return shape_err("cannot stack an empty list"),
        };
        let mut n = 0;
        let mut data = Vec::new();
        for it in items {
            let it = it.borrow();
            let d = it.dims;
            if (d.t, d.h, d.w, d.c) != (first.t, first.h, first.w, first.c) {
                return shape_err(format!("cannot stack {:?} with {:?}", d, first));
            }
            n += d.n;
            data.extend_from_slice(&it.data);
        }
        Self::from_vec(Dims { n, ..first }, data)
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    /// Largest absolute elementwise difference; errors on dim mismatch.
    pub fn max_abs_diff(&self, other: &VideoTensor) -> Result<Real> {
        if self.dims != other.dims {
            return shape_err(format!("{:?} vs {:?}", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_is_row_major() {
        let d = Dims::new(2, 3, 4, 5, 6);
        let mut expect = 0;
        for n in 0..2 {
            for t in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        for c in 0..6 {
                            assert_eq!(d.offset(n, t, h, w, c), expect);
                            expect += 1;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_zero_dims_and_bad_length() {
        assert!(VideoTensor::zeros(Dims::new(1, 0, 1, 1, 1)).is_err());
        assert!(VideoTensor::from_vec(Dims::new(1, 1, 1, 1, 2), vec![1.0]).is_err());
    }

    #[test]
    fn batch_item_and_stack_round_trip() {
        let mut rng = rand::rng();
        let x = VideoTensor::randn(Dims::new(3, 2, 2, 2, 2), 1.0, &mut rng).unwrap();
        let items: Vec<_> = (0..3).map(|n| x.batch_item(n).unwrap()).collect();
        assert_eq!(VideoTensor::stack_batch(&items).unwrap(), x);
    }
}
