//! Reverse-mode differentiation over a closed set of primitive ops.
//!
//! A [`Tape`] records each primitive as it executes, together with the values its
//! adjoint needs. [`Tape::backward`] replays the record in reverse and returns a
//! [`Gradients`] set for every parameter bundle and every input fed to the tape.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::ops::channels::{concat_channels, slice_channels};
use crate::ops::conv::{conv3d_backward, conv3d_forward, ConvGeometry};
use crate::ops::elementwise::{self, reduce_to, softmax, softmax_backward, softmax_cross_entropy, Broadcast};
use crate::ops::norm::{batch_norm_backward, channel_stats, inv_std, normalize};
use crate::ops::pool::{self, MaxPool2d};
use crate::ops::temporal::{temporal_diff, temporal_diff_backward};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, VideoTensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Deliberate adjoint corruptions used to prove the gradient checker catches them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    pub sigmoid_adjoint: bool,
}

enum Op {
    Input,
    Conv { x: Var, geometry: ConvGeometry, weight: ParamId, bias: Option<ParamId> },
    Affine { x: Var, scale: ParamId, shift: ParamId },
    BatchNorm { x: Var, inv_std: Vec<Real>, batch: bool },
    Relu { x: Var },
    Sigmoid { x: Var },
    Mul { a: Var, b: Var, mode: Broadcast },
    Add { a: Var, b: Var, mode: Broadcast },
    TemporalDiff { x: Var },
    ChannelPool { x: Var, argmax: Vec<usize> },
    SpatialPool { x: Var },
    GlobalPool { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat { xs: Vec<Var> },
    Slice { x: Var, start: usize },
    SoftmaxMix { xs: Vec<Var>, alpha: ParamId, weights: Vec<Real> },
}

struct Node {
    op: Op,
    value: VideoTensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TapeState {
    Recording,
    Differentiated,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// One buffer per bundle of the store, in store order, same length as the bundle.
    pub params: Vec<Vec<Real>>,
    inputs: Vec<(Var, VideoTensor)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> &[Real] {
        &self.params[id.index()]
    }

    /// Gradient with respect to a tape input.
    pub fn input(&self, v: Var) -> Option<&VideoTensor> {
        self.inputs.iter().find(|(u, _)| *u == v).map(|(_, g)| g)
    }

    /// `self += other`, bundle by bundle, in a fixed order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Batch statistics of one normalization call, for updating its running buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<Real>,
    /// Biased (population) variance.
    pub var: Vec<Real>,
    /// Sites the statistics were taken over.
    pub count: usize,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    state: TapeState,
    faults: Faults,
    training: bool,
    stats: Vec<BatchStats>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            state: TapeState::Recording,
            faults: Faults::default(),
            training: false,
            stats: Vec::new(),
        }
    }

    #[doc(hidden)]
    pub fn with_faults(store: &'p ParamStore, faults: Faults) -> Self {
        Tape { faults, ..Tape::new(store) }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &VideoTensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every ReLU sign and every max-pool winner on the tape. Two forward
    /// passes with equal patterns lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.value(*x).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::ChannelPool { argmax, .. } | Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, op: Op, value: VideoTensor) -> Result<Var> {
        if self.state != TapeState::Recording {
            return Err(Error::State("tape already differentiated; start a new tape".into()));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, x: VideoTensor) -> Result<Var> {
        self.push(Op::Input, x)
    }

    pub fn conv(&mut self, x: Var, geometry: ConvGeometry, weight: ParamId, bias: Option<ParamId>) -> Result<Var> {
        let b = bias.map(|b| self.store.value(b));
        let y = conv3d_forward(self.value(x), &geometry, self.store.value(weight), b)?;
        self.push(Op::Conv { x, geometry, weight, bias }, y)
    }

    pub fn affine(&mut self, x: Var, scale: ParamId, shift: ParamId) -> Result<Var> {
        let y = elementwise::affine(self.value(x), self.store.value(scale), self.store.value(shift))?;
        self.push(Op::Affine { x, scale, shift }, y)
    }

    /// Per-channel standardization. In training mode the statistics come from the
    /// batch (over `N, T, H, W`) and are recorded for [`Tape::batch_stats`]; otherwise
    /// the running buffers are used as constants.
    pub fn batch_norm(&mut self, x: Var, running_mean: ParamId, running_var: ParamId) -> Result<Var> {
        let c = self.value(x).dims().c;
        if self.store.value(running_mean).len() != c || self.store.value(running_var).len() != c {
            return shape_err(format!("normalization buffers do not match {c} channels"));
        }
        if self.training {
            let (mean, var) = channel_stats(self.value(x));
            let istd = inv_std(&var);
            let y = normalize(self.value(x), &mean, &istd);
            self.stats.push(BatchStats {
                running_mean,
                running_var,
                mean,
                var,
                count: self.value(x).dims().sites(),
            });
            self.push(Op::BatchNorm { x, inv_std: istd, batch: true }, y)
        } else {
            let istd = inv_std(self.store.value(running_var));
            let y = normalize(self.value(x), self.store.value(running_mean), &istd);
            self.push(Op::BatchNorm { x, inv_std: istd, batch: false }, y)
        }
    }

    /// Switch batch-statistics normalization on (training) or off (inference).
    pub fn set_training(&mut self, on: bool) {
        self.training = on;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Batch statistics gathered by [`Tape::batch_norm`] in training mode, in call order.
    pub fn batch_stats(&self) -> &[BatchStats] {
        &self.stats
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = elementwise::relu(self.value(x));
        self.push(Op::Relu { x }, y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = elementwise::sigmoid(self.value(x));
        self.push(Op::Sigmoid { x }, y)
    }

    /// `a ⊙ b`, with `b` broadcast over space or channels when its dims say so.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = Broadcast::resolve(self.value(a).dims(), self.value(b).dims())?;
        let y = elementwise::hadamard(self.value(a), self.value(b))?;
        self.push(Op::Mul { a, b, mode }, y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = Broadcast::resolve(self.value(a).dims(), self.value(b).dims())?;
        let y = elementwise::add(self.value(a), self.value(b))?;
        self.push(Op::Add { a, b, mode }, y)
    }

    /// Residual recalibration `attention ⊙ x + x`.
    pub fn recalibrate(&mut self, attention: Var, x: Var) -> Result<Var> {
        let gated = self.mul(x, attention)?;
        self.add(gated, x)
    }

    pub fn temporal_diff(&mut self, x: Var) -> Result<Var> {
        let y = temporal_diff(self.value(x));
        self.push(Op::TemporalDiff { x }, y)
    }

    pub fn channel_pool(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = pool::channel_pool_with_argmax(self.value(x));
        self.push(Op::ChannelPool { x, argmax }, y)
    }

    pub fn spatial_pool(&mut self, x: Var) -> Result<Var> {
        let y = pool::spatial_pool(self.value(x));
        self.push(Op::SpatialPool { x }, y)
    }

    pub fn global_pool(&mut self, x: Var) -> Result<Var> {
        let y = pool::global_pool(self.value(x));
        self.push(Op::GlobalPool { x }, y)
    }

    pub fn max_pool(&mut self, x: Var, p: MaxPool2d) -> Result<Var> {
        let (y, argmax) = p.forward(self.value(x))?;
        self.push(Op::MaxPool { x, argmax }, y)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&VideoTensor> = xs.iter().map(|&v| self.value(v)).collect();
        let y = concat_channels(&vals)?;
        self.push(Op::Concat { xs: xs.to_vec() }, y)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = slice_channels(self.value(x), start, len)?;
        self.push(Op::Slice { x, start }, y)
    }

    /// Split channels into `parts` equal contiguous groups.
    pub fn split(&mut self, x: Var, parts: usize) -> Result<Vec<Var>> {
        let c = self.value(x).dims().c;
        if parts == 0 || !c.is_multiple_of(parts) {
            return shape_err(format!("{c} channels cannot be split into {parts} equal groups"));
        }
        let w = c / parts;
        (0..parts).map(|p| self.slice(x, p * w, w)).collect()
    }

    /// `Σᵢ softmax(alpha)ᵢ · xsᵢ` with the logits `alpha` as the trainable leaf.
    pub fn softmax_mix(&mut self, xs: &[Var], alpha: ParamId) -> Result<Var> {
        let logits = self.store.value(alpha);
        if logits.len() != xs.len() || xs.is_empty() {
            return shape_err(format!("{} branch logits for {} branches", logits.len(), xs.len()));
        }
        let weights = softmax(logits);
        let dims = self.value(xs[0]).dims();
        let mut acc = vec![0.0; dims.len()];
        for (&v, &wi) in xs.iter().zip(&weights) {
            let x = self.value(v);
            if x.dims() != dims {
                return shape_err(format!("branch dims {:?} vs {:?}", x.dims(), dims));
            }
            for (a, b) in acc.iter_mut().zip(x.data()) {
                *a += wi * b;
            }
        }
        let y = VideoTensor::from_parts_unchecked(dims, acc);
        self.push(Op::SoftmaxMix { xs: xs.to_vec(), alpha, weights }, y)
    }

    /// Re-arm a differentiated tape so `backward` may run again on the same record.
    pub fn reset(&mut self) {
        self.state = TapeState::Recording;
    }

    /// Propagate `seed` (the loss gradient with respect to `output`) back through the
    /// record.
    pub fn backward(&mut self, output: Var, seed: &VideoTensor) -> Result<Gradients> {
        if self.state == TapeState::Differentiated {
            return Err(Error::State("backward already ran on this tape; reset it first".into()));
        }
        if output.0 >= self.nodes.len() {
            return shape_err("output handle does not belong to this tape");
        }
        if seed.dims() != self.value(output).dims() {
            return shape_err(format!(
                "seed dims {:?} do not match output {:?}",
                seed.dims(),
                self.value(output).dims()
            ));
        }
        self.state = TapeState::Differentiated;

        let store = self.store;
        let mut pgrads = store.zeros_like();
        let mut grads: Vec<Option<VideoTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        let mut inputs = Vec::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => inputs.push((Var(i), g)),
                Op::Conv { x, geometry, weight, bias } => {
                    let cg = conv3d_backward(self.value(*x), geometry, store.value(*weight), &g, true)?;
                    add_into(&mut pgrads[weight.index()], &cg.weights);
                    if let Some(b) = bias {
                        add_into(&mut pgrads[b.index()], &cg.bias);
                    }
                    accumulate(&mut grads, *x, cg.input);
                }
                Op::Affine { x, scale, shift } => {
                    let xv = self.value(*x);
                    let c = xv.dims().c;
                    let s = store.value(*scale);
                    let mut dx = Vec::with_capacity(g.data().len());
                    let (mut ds, mut db) = (vec![0.0; c], vec![0.0; c]);
                    for (grow, xrow) in g.data().chunks_exact(c).zip(xv.data().chunks_exact(c)) {
                        for k in 0..c {
                            ds[k] += grow[k] * xrow[k];
                            db[k] += grow[k];
                            dx.push(grow[k] * s[k]);
                        }
                    }
                    add_into(&mut pgrads[scale.index()], &ds);
                    add_into(&mut pgrads[shift.index()], &db);
                    accumulate(&mut grads, *x, VideoTensor::from_parts_unchecked(xv.dims(), dx));
                }
                Op::BatchNorm { x, inv_std, batch } => {
                    let dx = if *batch {
                        batch_norm_backward(&node.value, inv_std, &g)
                    } else {
                        let c = inv_std.len();
                        let data = g.data().chunks_exact(c).flat_map(|row| row.iter().zip(inv_std).map(|(a, b)| a * b)).collect();
                        VideoTensor::from_parts_unchecked(g.dims(), data)
                    };
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let dx = g.data().iter().zip(xv.data()).map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, VideoTensor::from_parts_unchecked(xv.dims(), dx));
                }
                Op::Sigmoid { x } => {
                    let corrupt = if self.faults.sigmoid_adjoint { 1.5 } else { 1.0 };
                    let dx = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, &y)| gv * y * (1.0 - y) * corrupt)
                        .collect();
                    accumulate(&mut grads, *x, VideoTensor::from_parts_unchecked(node.value.dims(), dx));
                }
                Op::Mul { a, b, mode } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ad = av.dims();
                    let da = elementwise::hadamard(&g, bv)?;
                    let prod: Vec<Real> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    let db = reduce_to(&prod, ad, *mode, bv.dims());
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, VideoTensor::from_parts_unchecked(bv.dims(), db));
                }
                Op::Add { a, b, mode } => {
                    let bd = self.value(*b).dims();
                    let db = reduce_to(g.data(), g.dims(), *mode, bd);
                    accumulate(&mut grads, *b, VideoTensor::from_parts_unchecked(bd, db));
                    accumulate(&mut grads, *a, g);
                }
                Op::TemporalDiff { x } => accumulate(&mut grads, *x, temporal_diff_backward(&g)),
                Op::ChannelPool { x, argmax } => {
                    let d = self.value(*x).dims();
                    accumulate(&mut grads, *x, pool::channel_pool_backward(&g, argmax, d));
                }
                Op::SpatialPool { x } => {
                    let d = self.value(*x).dims();
                    accumulate(&mut grads, *x, pool::spatial_pool_backward(&g, d));
                }
                Op::GlobalPool { x } => {
                    let d = self.value(*x).dims();
                    accumulate(&mut grads, *x, pool::global_pool_backward(&g, d));
                }
                Op::MaxPool { x, argmax } => {
                    let d = self.value(*x).dims();
                    accumulate(&mut grads, *x, MaxPool2d::backward(&g, argmax, d));
                }
                Op::Concat { xs } => {
                    let mut start = 0;
                    for &v in xs {
                        let w = self.value(v).dims().c;
                        accumulate(&mut grads, v, slice_channels(&g, start, w)?);
                        start += w;
                    }
                }
                Op::Slice { x, start } => {
                    let d = self.value(*x).dims();
                    let w = g.dims().c;
                    let mut dx = vec![0.0; d.len()];
                    for (row, grow) in dx.chunks_exact_mut(d.c).zip(g.data().chunks_exact(w)) {
                        row[*start..start + w].copy_from_slice(grow);
                    }
                    accumulate(&mut grads, *x, VideoTensor::from_parts_unchecked(d, dx));
                }
                Op::SoftmaxMix { xs, alpha, weights } => {
                    let dots: Vec<Real> = xs
                        .iter()
                        .map(|&v| self.value(v).data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
                        .collect();
                    add_into(&mut pgrads[alpha.index()], &softmax_backward(weights, &dots));
                    for (&v, &wi) in xs.iter().zip(weights) {
                        accumulate(&mut grads, v, elementwise::scale(&g, wi));
                    }
                }
            }
        }
        inputs.reverse();
        Ok(Gradients { params: pgrads, inputs })
    }
}

fn add_into(dst: &mut [Real], src: &[Real]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn accumulate(grads: &mut [Option<VideoTensor>], v: Var, g: VideoTensor) {
    match &mut grads[v.0] {
        Some(acc) => add_into(acc.data_mut(), g.data()),
        slot @ None => *slot = Some(g),
    }
}

/// Scalar objective on a block's output, with its gradient.
pub trait Objective {
    fn eval(&self, out: &VideoTensor) -> Result<(Real, VideoTensor)>;
}

/// `Σ r ⊙ out` with `r` drawn from a seeded standard normal shaped like `out`.
pub struct RandomProjection {
    pub seed: u64,
}

impl Objective for RandomProjection {
    fn eval(&self, out: &VideoTensor) -> Result<(Real, VideoTensor)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let r = VideoTensor::randn(out.dims(), 1.0, &mut rng)?;
        let loss = r.data().iter().zip(out.data()).map(|(a, b)| a * b).sum();
        Ok((loss, r))
    }
}

/// Mean softmax cross-entropy over the batch; `out` holds logits as `(N, 1, 1, 1, K)`.
pub struct CrossEntropy {
    pub labels: Vec<usize>,
}

impl Objective for CrossEntropy {
    fn eval(&self, out: &VideoTensor) -> Result<(Real, VideoTensor)> {
        let d = out.dims();
        if d.n != self.labels.len() || d.t * d.h * d.w != 1 {
            return shape_err(format!("{} labels for logits {:?}", self.labels.len(), d));
        }
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(d.len());
        for (row, &label) in out.data().chunks_exact(d.c).zip(&self.labels) {
            if label >= d.c {
                return Err(Error::Config(format!("label {label} out of range for {} classes", d.c)));
            }
            let (l, g) = softmax_cross_entropy(row, label);
            loss += l / d.n as Real;
            grad.extend(g.into_iter().map(|v| v / d.n as Real));
        }
        Ok((loss, VideoTensor::from_parts_unchecked(d, grad)))
    }
}

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub eps: Real,
    /// Minimum sampled coordinates per bundle (all of them when the bundle is smaller).
    pub coords_per_bundle: usize,
    pub seed: u64,
    pub check_input: bool,
    #[doc(hidden)]
    pub faults: Faults,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-5,
            coords_per_bundle: 64,
            seed: 0,
            check_input: true,
            faults: Faults::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: Real,
    /// Worst relative error per bundle; the input appears as `"input"`.
    pub bundles: Vec<(String, Real)>,
    pub coordinates: usize,
    /// Coordinates whose ±ε probes changed the ReLU / max pattern and were replaced
    /// by fresh draws.
    pub kinks_skipped: usize,
}

fn loss_of<F>(store: &ParamStore, x: &VideoTensor, build: &F, objective: &dyn Objective) -> Result<(Real, u64)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone())?;
    let out = build(&mut tape, xv)?;
    let (loss, _) = objective.eval(tape.value(out))?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, tape.activation_pattern()))
}

/// Probe coordinates of one bundle in random order until `want` of them land on a
/// smooth piece (or the bundle runs out). `probe(k, delta)` evaluates the loss with
/// coordinate `k` shifted by `delta`. Returns the worst error, checked and skipped counts.
fn probe_bundle(
    rng: &mut ChaCha8Rng,
    len: usize,
    want: usize,
    eps: Real,
    pattern: u64,
    analytic: &[Real],
    mut probe: impl FnMut(usize, Real) -> Result<(Real, u64)>,
) -> Result<(Real, usize, usize)> {
    let (mut worst, mut checked, mut skipped): (Real, usize, usize) = (0.0, 0, 0);
    for k in sample(rng, len, len) {
        if checked == want {
            break;
        }
        let (lp, pp) = probe(k, eps)?;
        let (lm, pm) = probe(k, -eps)?;
        if pp != pattern || pm != pattern {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        worst = worst.max((analytic[k] - numeric).abs() / analytic[k].abs().max(1.0));
        checked += 1;
    }
    if checked == 0 && len > 0 {
        return Err(Error::Numeric("every probed coordinate straddles a kink".into()));
    }
    Ok((worst, checked, skipped))
}

/// Compare analytic gradients of `objective(build(x))` against central differences.
///
/// The error per coordinate is `|analytic − numeric| / max(1, |analytic|)`.
/// Coordinates whose probes cross a ReLU or max kink are skipped and redrawn.
pub fn fd_check<F>(store: &ParamStore, x: &VideoTensor, build: F, objective: &dyn Objective, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if std::mem::size_of::<Real>() != 8 {
        return Err(Error::Config("gradient checks need the 64-bit build".into()));
    }
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::Config(format!("finite-difference step {} outside [1e-7, 1e-3]", opts.eps)));
    }
    let mut tape = Tape::with_faults(store, opts.faults);
    let xv = tape.input(x.clone())?;
    let out = build(&mut tape, xv)?;
    let (loss, seed) = objective.eval(tape.value(out))?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let pattern = tape.activation_pattern();
    let grads = tape.backward(out, &seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut report = FdReport {
        max_rel_error: 0.0,
        bundles: Vec::new(),
        coordinates: 0,
        kinks_skipped: 0,
    };
    let mut probe = store.clone();
    for (id, p) in store.iter().filter(|(_, p)| p.trainable) {
        let (worst, checked, skipped) = probe_bundle(&mut rng, p.value.len(), opts.coords_per_bundle, opts.eps, pattern, grads.param(id), |k, d| {
            probe.value_mut(id)[k] = p.value[k] + d;
            let r = loss_of(&probe, x, &build, objective);
            probe.value_mut(id)[k] = p.value[k];
            r
        })?;
        report.coordinates += checked;
        report.kinks_skipped += skipped;
        report.max_rel_error = report.max_rel_error.max(worst);
        report.bundles.push((p.name.clone(), worst));
    }
    if opts.check_input {
        let gx = grads.input(xv).expect("input gradient recorded");
        let mut xp = x.clone();
        let (worst, checked, skipped) = probe_bundle(&mut rng, x.data().len(), opts.coords_per_bundle, opts.eps, pattern, gx.data(), |k, d| {
            xp.data_mut()[k] = x.data()[k] + d;
            let r = loss_of(store, &xp, &build, objective);
            xp.data_mut()[k] = x.data()[k];
            r
        })?;
        report.coordinates += checked;
        report.kinks_skipped += skipped;
        report.max_rel_error = report.max_rel_error.max(worst);
        report.bundles.push(("input".into(), worst));
    }
    Ok(report)
}

/// Run `build` forward on `x` and return the output value.
pub fn evaluate<F>(store: &ParamStore, x: &VideoTensor, build: F) -> Result<VideoTensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone())?;
    let out = build(&mut tape, xv)?;
    Ok(tape.nodes.swap_remove(out.0).value)
}

/// Gradient of `objective(build(x))` and the loss, for callers that only need one
/// pass (training, determinism checks).
pub fn loss_and_gradients<F>(store: &ParamStore, x: &VideoTensor, build: F, objective: &dyn Objective) -> Result<(Real, Gradients)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone())?;
    let out = build(&mut tape, xv)?;
    let (loss, seed) = objective.eval(tape.value(out))?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, tape.backward(out, &seed)?))
}
