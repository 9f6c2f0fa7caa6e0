use crate::tensor::{Real, VideoTensor};

/// Forward difference along time, `out[t] = x[t + 1] - x[t]`, with the last frame
/// zero so the output keeps `T` frames.
pub fn temporal_diff(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    let frame = d.h * d.w * d.c;
    let mut out = vec![0.0; d.len()];
    let src = x.data();
    for n in 0..d.n {
        let base = n * d.t * frame;
        for t in 0..d.t.saturating_sub(1) {
            let cur = base + t * frame;
            let next = cur + frame;
            for i in 0..frame {
                out[cur + i] = src[next + i] - src[cur + i];
            }
        }
    }
    VideoTensor::from_parts_unchecked(d, out)
}

/// Adjoint of [`temporal_diff`].
pub fn temporal_diff_backward(dy: &VideoTensor) -> VideoTensor {
    let d = dy.dims();
    let frame = d.h * d.w * d.c;
    let g = dy.data();
    let mut dx: Vec<Real> = vec![0.0; d.len()];
    for n in 0..d.n {
        let base = n * d.t * frame;
        for t in 0..d.t.saturating_sub(1) {
            let cur = base + t * frame;
            let next = cur + frame;
            for i in 0..frame {
                dx[next + i] += g[cur + i];
                dx[cur + i] -= g[cur + i];
            }
        }
    }
    VideoTensor::from_parts_unchecked(d, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn constant_sequence_has_zero_difference() {
        let x = VideoTensor::full(Dims::new(2, 5, 3, 3, 2), 1.7).unwrap();
        assert!(temporal_diff(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp() {
        let x = VideoTensor::from_fn(Dims::new(1, 4, 1, 1, 1), |_, t, _, _, _| t as Real).unwrap();
        assert_eq!(temporal_diff(&x).data(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn single_frame_is_zero() {
        let x = VideoTensor::full(Dims::new(1, 1, 2, 2, 1), 3.0).unwrap();
        assert!(temporal_diff(&x).data().iter().all(|&v| v == 0.0));
    }
}
