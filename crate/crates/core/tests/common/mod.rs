//! Straight-line reference compositions built from literal loops and
//! `conv3d_oracle`, sharing no code with the tape.

#![allow(dead_code)]

use can_core::gscm::{Gmm, Gscm, Lmm, Pmm};
use can_core::mtcm::Mtcm;
use can_core::network::model::Block;
use can_core::network::Model;
use can_core::nn::{Conv, Norm};
use can_core::ops::conv3d_oracle;
use can_core::params::ParamStore;
use can_core::{Dims, Real, VideoTensor};

pub const NORM_EPS: Real = 1e-5;

pub fn conv(x: &VideoTensor, c: &Conv, store: &ParamStore) -> VideoTensor {
    conv3d_oracle(x, &c.kernel(store)).unwrap()
}

pub fn sigmoid(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    VideoTensor::from_fn(d, |n, t, h, w, c| 1.0 / (1.0 + (-x.at(n, t, h, w, c)).exp())).unwrap()
}

pub fn relu(x: &VideoTensor) -> VideoTensor {
    VideoTensor::from_fn(x.dims(), |n, t, h, w, c| x.at(n, t, h, w, c).max(0.0)).unwrap()
}

pub fn temporal_diff(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    VideoTensor::from_fn(d, |n, t, h, w, c| if t + 1 < d.t { x.at(n, t + 1, h, w, c) - x.at(n, t, h, w, c) } else { 0.0 }).unwrap()
}

pub fn channel_pool(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    VideoTensor::from_fn(d.with_c(2), |n, t, h, w, k| {
        let vals: Vec<Real> = (0..d.c).map(|c| x.at(n, t, h, w, c)).collect();
        if k == 0 {
            vals.iter().sum::<Real>() / d.c as Real
        } else {
            vals.iter().cloned().fold(Real::NEG_INFINITY, Real::max)
        }
    })
    .unwrap()
}

pub fn spatial_pool(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    VideoTensor::from_fn(Dims { h: 1, w: 1, ..d }, |n, t, _, _, c| {
        let mut s = 0.0;
        for h in 0..d.h {
            for w in 0..d.w {
                s += x.at(n, t, h, w, c);
            }
        }
        s / (d.h * d.w) as Real
    })
    .unwrap()
}

pub fn global_pool(x: &VideoTensor) -> VideoTensor {
    let d = x.dims();
    VideoTensor::from_fn(Dims::new(d.n, 1, 1, 1, d.c), |n, _, _, _, c| {
        let mut s = 0.0;
        for t in 0..d.t {
            for h in 0..d.h {
                for w in 0..d.w {
                    s += x.at(n, t, h, w, c);
                }
            }
        }
        s / (d.t * d.h * d.w) as Real
    })
    .unwrap()
}

pub fn concat(xs: &[&VideoTensor]) -> VideoTensor {
    let d = xs[0].dims();
    let widths: Vec<usize> = xs.iter().map(|x| x.dims().c).collect();
    let total = widths.iter().sum();
    VideoTensor::from_fn(d.with_c(total), |n, t, h, w, c| {
        let mut k = c;
        for (x, &wd) in xs.iter().zip(&widths) {
            if k < wd {
                return x.at(n, t, h, w, k);
            }
            k -= wd;
        }
        unreachable!()
    })
    .unwrap()
}

pub fn slice(x: &VideoTensor, start: usize, len: usize) -> VideoTensor {
    VideoTensor::from_fn(x.dims().with_c(len), |n, t, h, w, c| x.at(n, t, h, w, start + c)).unwrap()
}

/// `a ⊙ x + x` with `a` broadcast over space (`H = W = 1`) or channels (`C = 1`).
pub fn recalibrate(a: &VideoTensor, x: &VideoTensor) -> VideoTensor {
    let ad = a.dims();
    VideoTensor::from_fn(x.dims(), |n, t, h, w, c| {
        let (hh, ww) = if ad.h == 1 && ad.w == 1 { (0, 0) } else { (h, w) };
        let cc = if ad.c == 1 { 0 } else { c };
        let v = x.at(n, t, h, w, c);
        a.at(n, t, hh, ww, cc) * v + v
    })
    .unwrap()
}

pub fn add(a: &VideoTensor, b: &VideoTensor) -> VideoTensor {
    VideoTensor::from_fn(a.dims(), |n, t, h, w, c| a.at(n, t, h, w, c) + b.at(n, t, h, w, c)).unwrap()
}

/// Inference-mode normalization with the running buffers.
pub fn norm(x: &VideoTensor, nm: &Norm, store: &ParamStore) -> VideoTensor {
    let mean = store.value(nm.running_mean);
    let var = store.value(nm.running_var);
    let scale = store.value(nm.affine.scale);
    let shift = store.value(nm.affine.shift);
    VideoTensor::from_fn(x.dims(), |n, t, h, w, c| (x.at(n, t, h, w, c) - mean[c]) / (var[c] + NORM_EPS).sqrt() * scale[c] + shift[c]).unwrap()
}

pub fn pmm(f: &VideoTensor, m: &Pmm, store: &ParamStore) -> VideoTensor {
    let r = conv(f, &m.reduce, store);
    let joined = concat(&[&r, &temporal_diff(&r)]);
    let logits = conv(&conv(&joined, &m.temporal, store), &m.expand, store);
    recalibrate(&sigmoid(&logits), f)
}

pub fn lmm(f: &VideoTensor, m: &Lmm, store: &ParamStore) -> VideoTensor {
    let logits = conv(&channel_pool(f), &m.conv, store);
    recalibrate(&sigmoid(&logits), f)
}

pub fn gmm(f: &VideoTensor, m: &Gmm, store: &ParamStore) -> VideoTensor {
    let r = conv(&spatial_pool(f), &m.reduce, store);
    let joined = concat(&[&r, &temporal_diff(&r)]);
    let logits = conv(&conv(&joined, &m.temporal, store), &m.expand, store);
    recalibrate(&sigmoid(&logits), f)
}

pub fn gscm(f: &VideoTensor, m: &Gscm, store: &ParamStore) -> VideoTensor {
    let cg = f.dims().c / 4;
    let g: Vec<VideoTensor> = (0..4).map(|i| slice(f, i * cg, cg)).collect();
    let g2 = m.pmm.as_ref().map_or_else(|| g[1].clone(), |p| pmm(&g[1], p, store));
    let g3 = m.lmm.as_ref().map_or_else(|| g[2].clone(), |p| lmm(&g[2], p, store));
    let g4 = m.gmm.as_ref().map_or_else(|| g[3].clone(), |p| gmm(&g[3], p, store));
    concat(&[&g[0], &g2, &g3, &g4])
}

pub fn mtcm(g: &VideoTensor, m: &Mtcm, store: &ParamStore) -> VideoTensor {
    let r = conv(g, &m.reduce, store);
    let alpha = store.value(m.alpha);
    let mx = alpha.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let e: Vec<Real> = alpha.iter().map(|a| (a - mx).exp()).collect();
    let z: Real = e.iter().sum();
    let outs: Vec<VideoTensor> = m.branches.iter().map(|b| conv(&r, b, store)).collect();
    let fused = VideoTensor::from_fn(r.dims(), |n, t, h, w, c| outs.iter().zip(&e).map(|(o, ei)| ei / z * o.at(n, t, h, w, c)).sum()).unwrap();
    let logits = conv(&fused, &m.expand, store);
    recalibrate(&sigmoid(&logits), g)
}

/// Bottleneck block in inference mode.
pub fn block(x: &VideoTensor, b: &Block, store: &ParamStore) -> VideoTensor {
    let h = relu(&norm(&conv(x, &b.conv1, store), &b.bn1, store));
    let mut h = relu(&norm(&conv(&h, &b.conv2, store), &b.bn2, store));
    if let Some(g) = &b.gscm {
        h = gscm(&h, g, store);
    }
    if let Some(m) = &b.mtcm {
        h = mtcm(&h, m, store);
    }
    let h = norm(&conv(&h, &b.conv3, store), &b.bn3, store);
    let skip = match &b.shortcut {
        Some((c, n)) => norm(&conv(x, c, store), n, store),
        None => x.clone(),
    };
    relu(&add(&h, &skip))
}

/// Whole network in inference mode (specs without a stem max-pool).
pub fn model(x: &VideoTensor, m: &Model, store: &ParamStore) -> VideoTensor {
    assert!(!m.spec.stem.max_pool);
    let mut h = relu(&norm(&conv(x, &m.stem, store), &m.stem_bn, store));
    for b in &m.blocks {
        h = block(&h, b, store);
    }
    conv(&global_pool(&h), &m.fc, store)
}

/// Add `N(0, scale²)` noise to every trainable bundle and set the running buffers to
/// non-trivial values (variances stay positive).
pub fn jitter(store: &mut ParamStore, scale: Real, rng: &mut impl rand::Rng) {
    use rand_distr::{Distribution, StandardNormal};
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (trainable, is_var) = {
            let p = store.get(id);
            (p.trainable, p.name.ends_with("running_var"))
        };
        for v in store.value_mut(id) {
            let z: f64 = StandardNormal.sample(rng);
            *v = if trainable {
                *v + scale * z as Real
            } else if is_var {
                0.5 + (z as Real).abs()
            } else {
                0.3 * z as Real
            };
        }
    }
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// p-value of a χ² independence test between class and per-frame dot position.
///
/// Each clip contributes one frame (index `clip % T`); the position is the brightest
/// pixel, binned on a 4 × 4 grid. Clips are generated in chunks of `per_chunk`
/// clips per class to bound memory.
pub fn position_independence_p(total_clips: usize, per_chunk: usize) -> f64 {
    use can_core::data::{generate, SynthConfig, CLASSES};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    let cfg = SynthConfig::default();
    let bins = 16;
    let mut counts = vec![vec![0.0f64; bins]; CLASSES];
    let mut seen = 0;
    let mut chunk = 0;
    while seen < total_clips {
        let ds = generate(1000 + chunk, per_chunk, &cfg);
        chunk += 1;
        for clip in &ds.clips {
            if seen == total_clips {
                break;
            }
            let t = seen % cfg.frames;
            let (mut best, mut at) = (Real::NEG_INFINITY, (0, 0));
            for h in 0..cfg.height {
                for w in 0..cfg.width {
                    let v = clip.frames.at(0, t, h, w, 0);
                    if v > best {
                        best = v;
                        at = (h, w);
                    }
                }
            }
            let cell = (at.0 * 4 / cfg.height) * 4 + at.1 * 4 / cfg.width;
            counts[clip.label][cell] += 1.0;
            seen += 1;
        }
    }
    let row: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..bins).map(|b| counts.iter().map(|r| r[b]).sum()).collect();
    let n: f64 = row.iter().sum();
    let mut stat = 0.0;
    for (k, r) in counts.iter().enumerate() {
        for b in 0..bins {
            let e = row[k] * col[b] / n;
            stat += (r[b] - e).powi(2) / e;
        }
    }
    let dof = ((CLASSES - 1) * (bins - 1)) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}
