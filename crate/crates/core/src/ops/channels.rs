use crate::error::{shape_err, Result};
use crate::tensor::{Real, VideoTensor};

/// Append channels of every input in list order.
pub fn concat_channels(xs: &[&VideoTensor]) -> Result<VideoTensor> {
    let first = match xs.first() {
        Some(x) => x.dims(),
        None => return shape_err("concat_channels needs at least one tensor"),
    };
    for x in xs {
        let d = x.dims();
        if (d.n, d.t, d.h, d.w) != (first.n, first.t, first.h, first.w) {
            return shape_err(format!("cannot concatenate {d:?} with {first:?}"));
        }
    }
    let c_total: usize = xs.iter().map(|x| x.dims().c).sum();
    let dims = first.with_c(c_total);
    let mut out = Vec::with_capacity(dims.len());
    for s in 0..first.sites() {
        for x in xs {
            let c = x.dims().c;
            out.extend_from_slice(&x.data()[s * c..(s + 1) * c]);
        }
    }
    Ok(VideoTensor::from_parts_unchecked(dims, out))
}

/// Channel range `[start, start + len)` as its own tensor.
pub fn slice_channels(x: &VideoTensor, start: usize, len: usize) -> Result<VideoTensor> {
    let d = x.dims();
    if len == 0 || start + len > d.c {
        return shape_err(format!("channel slice {start}..{} out of range for {d:?}", start + len));
    }
    let mut out: Vec<Real> = Vec::with_capacity(d.sites() * len);
    for row in x.data().chunks_exact(d.c) {
        out.extend_from_slice(&row[start..start + len]);
    }
    Ok(VideoTensor::from_parts_unchecked(d.with_c(len), out))
}

/// Split into `parts` contiguous channel groups of equal width.
pub fn split_channels(x: &VideoTensor, parts: usize) -> Result<Vec<VideoTensor>> {
    let c = x.dims().c;
    if parts == 0 || !c.is_multiple_of(parts) {
        return shape_err(format!("{c} channels cannot be split into {parts} equal groups"));
    }
    let width = c / parts;
    (0..parts).map(|p| slice_channels(x, p * width, width)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use rand::SeedableRng;

    #[test]
    fn concat_of_one_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = VideoTensor::randn(Dims::new(1, 2, 3, 3, 5), 1.0, &mut rng).unwrap();
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn errors() {
        let a = VideoTensor::zeros(Dims::new(1, 2, 3, 3, 5)).unwrap();
        let b = VideoTensor::zeros(Dims::new(1, 2, 3, 4, 5)).unwrap();
        assert!(concat_channels(&[&a, &b]).is_err());
        assert!(concat_channels(&[]).is_err());
        assert!(split_channels(&a, 4).is_err());
    }

    #[test]
    fn channel_index_mapping() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let parts: Vec<_> = (0..4)
            .map(|_| VideoTensor::randn(Dims::new(1, 2, 2, 2, 3), 1.0, &mut rng).unwrap())
            .collect();
        let refs: Vec<_> = parts.iter().collect();
        let y = concat_channels(&refs).unwrap();
        let cc = y.dims().c;
        for c in 0..cc {
            let src = 4 * c / cc;
            assert_eq!(y.at(0, 1, 1, 0, c), parts[src].at(0, 1, 1, 0, c % 3));
        }
    }
}
