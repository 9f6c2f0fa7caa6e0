//! Grouped, dilated, strided 3-D convolution over `(N, T, H, W, C)` tensors.
//!
//! Weights are stored as `(out_channels, in_channels_per_group, kT, kH, kW)`.
//! Dense convolutions (one group) lower to im2col + GEMM; grouped and depthwise
//! convolutions use a direct loop with the channel axis innermost.
//! [`conv3d_oracle`] is the literal nested-loop definition the fast path is checked
//! against.

use crate::error::{shape_err, Result};
use crate::ops::gemm::{gemm, Layout};
use crate::tensor::{Dims, Real, VideoTensor};

/// Shape and sampling pattern of a convolution, independent of its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    /// `(kT, kH, kW)`
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    /// Stride-1 convolution with padding that preserves `T, H, W`.
    pub fn same(in_channels: usize, out_channels: usize, kernel: [usize; 3], dilation: [usize; 3], groups: usize) -> Self {
        let padding = [0, 1, 2].map(|i| dilation[i] * (kernel[i] - 1) / 2);
        ConvGeometry {
            in_channels,
            out_channels,
            groups,
            kernel,
            stride: [1; 3],
            dilation,
            padding,
        }
    }

    /// 1×1×1 channel projection.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, [1, 1, 1], [1, 1, 1], 1)
    }

    /// Temporal-only kernel of length `k` with "same" padding.
    pub fn temporal(in_channels: usize, out_channels: usize, k: usize, dilation: usize, groups: usize) -> Self {
        Self::same(in_channels, out_channels, [k, 1, 1], [dilation, 1, 1], groups)
    }

    /// Per-frame 2-D `k×k` convolution with the given spatial stride and padding `k/2`.
    pub fn spatial(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            groups: 1,
            kernel: [1, k, k],
            stride: [1, stride, stride],
            dilation: [1; 3],
            padding: [0, k / 2, k / 2],
        }
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_per_group() * self.kernel_volume()
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_per_group(),
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return shape_err(format!("degenerate convolution {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return shape_err(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) || self.dilation.contains(&0) {
            return shape_err(format!("kernel, stride and dilation must be positive: {self:?}"));
        }
        Ok(())
    }

    /// Output extent along one axis, or `None` when it would be < 1.
    fn out_len(&self, axis: usize, input: usize) -> Option<usize> {
        let span = self.dilation[axis] * (self.kernel[axis] - 1) + 1;
        let padded = input + 2 * self.padding[axis];
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride[axis] + 1)
    }

    /// Output dims for an input of dims `x`, checking channel agreement.
    pub fn output_dims(&self, x: Dims) -> Result<Dims> {
        self.validate()?;
        if x.c != self.in_channels {
            return shape_err(format!(
                "input has {} channels, convolution expects {}",
                x.c, self.in_channels
            ));
        }
        match (self.out_len(0, x.t), self.out_len(1, x.h), self.out_len(2, x.w)) {
            (Some(t), Some(h), Some(w)) => Ok(Dims::new(x.n, t, h, w, self.out_channels)),
            _ => shape_err(format!("convolution {self:?} leaves no output for input {x:?}")),
        }
    }

    /// Input coordinate touched by output coordinate `o` and tap `k` on `axis`.
    #[inline]
    fn source(&self, axis: usize, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride[axis] + k * self.dilation[axis]) as isize - self.padding[axis] as isize;
        if pos >= 0 && (pos as usize) < extent {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// A convolution with concrete weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub geometry: ConvGeometry,
    pub weights: Vec<Real>,
    pub bias: Vec<Real>,
}

impl ConvKernel {
    pub fn new(geometry: ConvGeometry, weights: Vec<Real>, bias: Vec<Real>) -> Result<Self> {
        geometry.validate()?;
        if weights.len() != geometry.weight_len() {
            return shape_err(format!(
                "weights have {} entries, geometry needs {}",
                weights.len(),
                geometry.weight_len()
            ));
        }
        if bias.len() != geometry.out_channels {
            return shape_err(format!(
                "bias has {} entries, geometry needs {}",
                bias.len(),
                geometry.out_channels
            ));
        }
        Ok(ConvKernel { geometry, weights, bias })
    }
}

pub fn conv3d(x: &VideoTensor, k: &ConvKernel) -> Result<VideoTensor> {
    conv3d_forward(x, &k.geometry, &k.weights, Some(&k.bias))
}

/// Direct definition: every output is the bias plus a sum over the kernel support,
/// with out-of-range taps contributing zero.
pub fn conv3d_oracle(x: &VideoTensor, k: &ConvKernel) -> Result<VideoTensor> {
    let g = &k.geometry;
    let od = g.output_dims(x.dims())?;
    let xd = x.dims();
    let cin_g = g.in_per_group();
    let cout_g = g.out_per_group();
    let mut y = VideoTensor::zeros(od)?;
    for n in 0..od.n {
        for o in 0..od.c {
            let group = o / cout_g;
            for ot in 0..od.t {
                for oh in 0..od.h {
                    for ow in 0..od.w {
                        let mut acc = k.bias[o];
                        for ci in 0..cin_g {
                            let c = group * cin_g + ci;
                            for kt in 0..g.kernel[0] {
                                for kh in 0..g.kernel[1] {
                                    for kw in 0..g.kernel[2] {
                                        let it = (ot * g.stride[0] + kt * g.dilation[0]) as isize - g.padding[0] as isize;
                                        let ih = (oh * g.stride[1] + kh * g.dilation[1]) as isize - g.padding[1] as isize;
                                        let iw = (ow * g.stride[2] + kw * g.dilation[2]) as isize - g.padding[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 {
                                            continue;
                                        }
                                        let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                                        if it >= xd.t || ih >= xd.h || iw >= xd.w {
                                            continue;
                                        }
                                        let widx = (((o * cin_g + ci) * g.kernel[0] + kt) * g.kernel[1] + kh) * g.kernel[2] + kw;
                                        acc += k.weights[widx] * x.at(n, it, ih, iw, c);
                                    }
                                }
                            }
                        }
                        *y.at_mut(n, ot, oh, ow, o) = acc;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of a convolution with respect to its input, weights and bias.
pub struct ConvGrads {
    pub input: VideoTensor,
    pub weights: Vec<Real>,
    pub bias: Vec<Real>,
}

/// One entry of the gather table: output site, tap, and source site (if in range).
struct Taps {
    out_sites: usize,
    kvol: usize,
    /// `out_sites * kvol` entries; `usize::MAX` marks padding.
    src: Vec<usize>,
}

const PAD: usize = usize::MAX;

/// Source site (within one batch item) for each (output site, tap) pair.
fn build_taps(g: &ConvGeometry, xd: Dims, od: Dims) -> Taps {
    let kvol = g.kernel_volume();
    let out_sites = od.t * od.h * od.w;
    let mut src = Vec::with_capacity(out_sites * kvol);
    for ot in 0..od.t {
        for oh in 0..od.h {
            for ow in 0..od.w {
                for kt in 0..g.kernel[0] {
                    let it = g.source(0, ot, kt, xd.t);
                    for kh in 0..g.kernel[1] {
                        let ih = g.source(1, oh, kh, xd.h);
                        for kw in 0..g.kernel[2] {
                            let iw = g.source(2, ow, kw, xd.w);
                            src.push(match (it, ih, iw) {
                                (Some(t), Some(h), Some(w)) => (t * xd.h + h) * xd.w + w,
                                _ => PAD,
                            });
                        }
                    }
                }
            }
        }
    }
    Taps { out_sites, kvol, src }
}

fn is_plain_pointwise(g: &ConvGeometry) -> bool {
    g.groups == 1 && g.kernel == [1, 1, 1] && g.stride == [1, 1, 1] && g.padding == [0, 0, 0]
}

/// Repack `(O, I, kvol)` weights into a `(kvol * I) × O` matrix with row `tap * I + i`.
fn pack_weights(g: &ConvGeometry, w: &[Real]) -> Vec<Real> {
    let (o_n, i_n, kvol) = (g.out_channels, g.in_per_group(), g.kernel_volume());
    let mut packed = vec![0.0; w.len()];
    for o in 0..o_n {
        for i in 0..i_n {
            for tap in 0..kvol {
                packed[(tap * i_n + i) * o_n + o] = w[(o * i_n + i) * kvol + tap];
            }
        }
    }
    packed
}

fn unpack_weights(g: &ConvGeometry, packed: &[Real], w: &mut [Real]) {
    let (o_n, i_n, kvol) = (g.out_channels, g.in_per_group(), g.kernel_volume());
    for o in 0..o_n {
        for i in 0..i_n {
            for tap in 0..kvol {
                w[(o * i_n + i) * kvol + tap] += packed[(tap * i_n + i) * o_n + o];
            }
        }
    }
}

fn check_params(g: &ConvGeometry, w: &[Real], b: Option<&[Real]>) -> Result<()> {
    g.validate()?;
    if w.len() != g.weight_len() {
        return shape_err(format!("weights have {} entries, geometry needs {}", w.len(), g.weight_len()));
    }
    if let Some(b) = b {
        if b.len() != g.out_channels {
            return shape_err(format!("bias has {} entries, geometry needs {}", b.len(), g.out_channels));
        }
    }
    Ok(())
}

/// Optimized forward convolution on raw weight/bias slices.
pub fn conv3d_forward(x: &VideoTensor, g: &ConvGeometry, w: &[Real], b: Option<&[Real]>) -> Result<VideoTensor> {
    check_params(g, w, b)?;
    let xd = x.dims();
    let od = g.output_dims(xd)?;
    let mut y = vec![0.0; od.len()];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(od.c) {
            row.copy_from_slice(b);
        }
    }
    let cin = g.in_channels;
    let cout = g.out_channels;
    if is_plain_pointwise(g) {
        // y (sites × O) += x (sites × I) · wᵀ, w stored O × I.
        gemm(xd.sites(), cin, cout, x.data(), Layout::row_major(cin), w, Layout::transposed(cin), &mut y, 1.0);
        return Ok(VideoTensor::from_parts_unchecked(od, y));
    }
    let taps = build_taps(g, xd, od);
    let in_item = xd.t * xd.h * xd.w * cin;
    let out_item = taps.out_sites * cout;
    if g.groups == 1 {
        let packed = pack_weights(g, w);
        let kdim = taps.kvol * cin;
        let mut col = vec![0.0; taps.out_sites * kdim];
        for n in 0..xd.n {
            let xs = &x.data()[n * in_item..(n + 1) * in_item];
            im2col(&taps, xs, cin, &mut col);
            gemm(
                taps.out_sites,
                kdim,
                cout,
                &col,
                Layout::row_major(kdim),
                &packed,
                Layout::row_major(cout),
                &mut y[n * out_item..(n + 1) * out_item],
                1.0,
            );
        }
    } else {
        let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
        // wt[tap][o][i] so the innermost loop over output channels of a group reads
        // contiguous weights when cin_g == 1 (the depthwise case).
        let kvol = taps.kvol;
        let mut wt = vec![0.0; w.len()];
        for o in 0..cout {
            for i in 0..cin_g {
                for tap in 0..kvol {
                    wt[(tap * cin_g + i) * cout + o] = w[(o * cin_g + i) * kvol + tap];
                }
            }
        }
        for n in 0..xd.n {
            let xs = &x.data()[n * in_item..(n + 1) * in_item];
            let ys = &mut y[n * out_item..(n + 1) * out_item];
            for s in 0..taps.out_sites {
                let yrow = &mut ys[s * cout..(s + 1) * cout];
                for tap in 0..kvol {
                    let src = taps.src[s * kvol + tap];
                    if src == PAD {
                        continue;
                    }
                    let xrow = &xs[src * cin..(src + 1) * cin];
                    for i in 0..cin_g {
                        let wrow = &wt[(tap * cin_g + i) * cout..(tap * cin_g + i + 1) * cout];
                        for (o, yo) in yrow.iter_mut().enumerate() {
                            let c = (o / cout_g) * cin_g + i;
                            *yo += wrow[o] * xrow[c];
                        }
                    }
                }
            }
        }
    }
    Ok(VideoTensor::from_parts_unchecked(od, y))
}

fn im2col(taps: &Taps, xs: &[Real], cin: usize, col: &mut [Real]) {
    let kdim = taps.kvol * cin;
    for s in 0..taps.out_sites {
        let row = &mut col[s * kdim..(s + 1) * kdim];
        for tap in 0..taps.kvol {
            let dst = &mut row[tap * cin..(tap + 1) * cin];
            match taps.src[s * taps.kvol + tap] {
                PAD => dst.fill(0.0),
                src => dst.copy_from_slice(&xs[src * cin..(src + 1) * cin]),
            }
        }
    }
}

/// Adjoint of [`conv3d_forward`]. `dy` has the forward output's dims.
pub fn conv3d_backward(
    x: &VideoTensor,
    g: &ConvGeometry,
    w: &[Real],
    dy: &VideoTensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    check_params(g, w, None)?;
    let xd = x.dims();
    let od = g.output_dims(xd)?;
    if dy.dims() != od {
        return shape_err(format!("output gradient {:?} does not match output {:?}", dy.dims(), od));
    }
    let cin = g.in_channels;
    let cout = g.out_channels;
    let mut db = vec![0.0; cout];
    for row in dy.data().chunks_exact(cout) {
        for (a, v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    let mut dw = vec![0.0; w.len()];
    let mut dx = vec![0.0; xd.len()];

    if is_plain_pointwise(g) {
        let sites = xd.sites();
        // dw (O × I) = dyᵀ (O × sites) · x (sites × I)
        gemm(cout, sites, cin, dy.data(), Layout::transposed(cout), x.data(), Layout::row_major(cin), &mut dw, 0.0);
        if need_input_grad {
            // dx (sites × I) = dy (sites × O) · w (O × I)
            gemm(sites, cout, cin, dy.data(), Layout::row_major(cout), w, Layout::row_major(cin), &mut dx, 0.0);
        }
        return Ok(ConvGrads {
            input: VideoTensor::from_parts_unchecked(xd, dx),
            weights: dw,
            bias: db,
        });
    }

    let taps = build_taps(g, xd, od);
    let in_item = xd.t * xd.h * xd.w * cin;
    let out_item = taps.out_sites * cout;
    let kvol = taps.kvol;
    if g.groups == 1 {
        let packed = pack_weights(g, w);
        let kdim = kvol * cin;
        let mut col = vec![0.0; taps.out_sites * kdim];
        let mut dpacked = vec![0.0; packed.len()];
        for n in 0..xd.n {
            let xs = &x.data()[n * in_item..(n + 1) * in_item];
            let dys = &dy.data()[n * out_item..(n + 1) * out_item];
            im2col(&taps, xs, cin, &mut col);
            // dpacked (kdim × O) += colᵀ · dy
            gemm(kdim, taps.out_sites, cout, &col, Layout::transposed(kdim), dys, Layout::row_major(cout), &mut dpacked, 1.0);
            if need_input_grad {
                // dcol (sites × kdim) = dy · packedᵀ
                gemm(taps.out_sites, cout, kdim, dys, Layout::row_major(cout), &packed, Layout::transposed(cout), &mut col, 0.0);
                let dxs = &mut dx[n * in_item..(n + 1) * in_item];
                for s in 0..taps.out_sites {
                    for tap in 0..kvol {
                        let src = taps.src[s * kvol + tap];
                        if src == PAD {
                            continue;
                        }
                        let from = &col[s * kdim + tap * cin..s * kdim + (tap + 1) * cin];
                        for (d, v) in dxs[src * cin..(src + 1) * cin].iter_mut().zip(from) {
                            *d += v;
                        }
                    }
                }
            }
        }
        unpack_weights(g, &dpacked, &mut dw);
    } else {
        let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
        let mut dwt = vec![0.0; w.len()];
        let mut wt = vec![0.0; w.len()];
        for o in 0..cout {
            for i in 0..cin_g {
                for tap in 0..kvol {
                    wt[(tap * cin_g + i) * cout + o] = w[(o * cin_g + i) * kvol + tap];
                }
            }
        }
        for n in 0..xd.n {
            let xs = &x.data()[n * in_item..(n + 1) * in_item];
            let dys = &dy.data()[n * out_item..(n + 1) * out_item];
            let dxs = &mut dx[n * in_item..(n + 1) * in_item];
            for s in 0..taps.out_sites {
                let dyrow = &dys[s * cout..(s + 1) * cout];
                for tap in 0..kvol {
                    let src = taps.src[s * kvol + tap];
                    if src == PAD {
                        continue;
                    }
                    for i in 0..cin_g {
                        let base = (tap * cin_g + i) * cout;
                        for (o, &gy) in dyrow.iter().enumerate() {
                            let c = (o / cout_g) * cin_g + i;
                            dwt[base + o] += gy * xs[src * cin + c];
                            if need_input_grad {
                                dxs[src * cin + c] += gy * wt[base + o];
                            }
                        }
                    }
                }
            }
        }
        for o in 0..cout {
            for i in 0..cin_g {
                for tap in 0..kvol {
                    dw[(o * cin_g + i) * kvol + tap] = dwt[(tap * cin_g + i) * cout + o];
                }
            }
        }
    }
    Ok(ConvGrads {
        input: VideoTensor::from_parts_unchecked(xd, dx),
        weights: dw,
        bias: db,
    })
}

/// Multiply-accumulate count of one forward pass: output elements × kernel volume ×
/// input channels per group.
pub fn conv_macs(g: &ConvGeometry, out: Dims) -> u64 {
    out.len() as u64 * g.kernel_volume() as u64 * g.in_per_group() as u64
}
