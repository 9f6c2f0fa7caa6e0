//! Named finite-difference certification cases for every primitive and module.
//!
//! Each case builds a small random instance from a seed, runs [`fd_check`] and
//! reports the worst relative error. Inputs are kept small so the whole suite runs
//! in seconds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{fd_check, CrossEntropy, Faults, FdOptions, FdReport, Objective, RandomProjection, Tape, Var};
use crate::error::{Error, Result};
use crate::gscm::{Gmm, Gscm, GscmConfig, Lmm, Pmm};
use crate::mtcm::{Mtcm, MtcmConfig};
use crate::network::model::{Block, Model};
use crate::network::spec::{BlockSpec, CanOptions, NetSpec};
use crate::nn::{Affine, Conv, Norm};
use crate::ops::conv::ConvGeometry;
use crate::ops::pool::MaxPool2d;
use crate::params::ParamStore;
use crate::tensor::{Dims, Real, VideoTensor};

pub const TOLERANCE: Real = 1e-4;

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

/// Case names accepted by [`check`], in suite order.
pub const CASES: &[&str] = &[
    "conv3d",
    "conv3d_dilated",
    "conv3d_grouped",
    "conv3d_depthwise",
    "conv3d_strided",
    "temporal_diff",
    "channel_pool",
    "spatial_pool",
    "global_pool",
    "max_pool",
    "sigmoid",
    "softmax",
    "affine",
    "batch_norm",
    "pmm",
    "lmm",
    "gmm",
    "gscm",
    "mtcm",
    "block",
    "tinycan",
];

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub case: String,
    pub seed: u64,
    pub report: FdReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= TOLERANCE
    }
}

fn input(dims: Dims, rng: &mut ChaCha8Rng) -> Result<VideoTensor> {
    VideoTensor::randn(dims, 1.0, rng)
}

/// Randomize every bundle (biases and scales included) so no adjoint term hides
/// behind a zero initialization.
fn jitter(store: &mut ParamStore, scale: Real, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        for v in store.value_mut(id) {
            let z: f64 = StandardNormal.sample(rng);
            *v += scale * z as Real;
        }
    }
}

fn run<F>(store: &ParamStore, x: &VideoTensor, build: F, objective: &dyn Objective, seed: u64, faults: Faults) -> Result<FdReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let opts = FdOptions {
        seed,
        faults,
        ..FdOptions::default()
    };
    fd_check(store, x, build, objective, &opts)
}

/// Normalization layers use batch statistics, as during training.
fn training(t: &mut Tape, f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<Var> {
    t.set_training(true);
    f(t)
}

fn conv_case(g: ConvGeometry, dims: Dims, seed: u64, faults: Faults) -> Result<FdReport> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let conv = Conv::new(&mut store, "conv", g, true, 1.0, rng)?;
    jitter(&mut store, 0.1, rng);
    let x = input(dims, rng)?;
    run(&store, &x, |t, v| conv.forward(t, v), &RandomProjection { seed }, seed, faults)
}

/// Parameter-free op `f` behind a pointwise conv, so the op sees mixed inputs.
fn op_case<F>(dims: Dims, seed: u64, faults: Faults, f: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let conv = Conv::new(&mut store, "mix", ConvGeometry::pointwise(dims.c, dims.c), true, 1.0, rng)?;
    let x = input(dims, rng)?;
    run(
        &store,
        &x,
        |t, v| {
            let h = conv.forward(t, v)?;
            f(t, h)
        },
        &RandomProjection { seed },
        seed,
        faults,
    )
}

/// Run one named case at one seed.
pub fn check(case: &str, seed: u64, faults: Faults) -> Result<FdReport> {
    let d = Dims::new;
    match case {
        "conv3d" => conv_case(ConvGeometry::same(4, 5, [3, 3, 3], [1, 1, 1], 1), d(2, 3, 4, 4, 4), seed, faults),
        "conv3d_dilated" => conv_case(ConvGeometry::same(3, 4, [3, 3, 3], [3, 2, 1], 1), d(1, 7, 5, 4, 3), seed, faults),
        "conv3d_grouped" => conv_case(ConvGeometry::same(8, 4, [1, 3, 3], [1, 1, 1], 2), d(1, 3, 4, 4, 8), seed, faults),
        "conv3d_depthwise" => conv_case(ConvGeometry::temporal(6, 6, 3, 2, 6), d(2, 6, 3, 3, 6), seed, faults),
        "conv3d_strided" => conv_case(ConvGeometry::spatial(3, 6, 3, 2), d(1, 2, 7, 7, 3), seed, faults),
        "temporal_diff" => op_case(d(1, 5, 3, 3, 4), seed, faults, |t, v| t.temporal_diff(v)),
        "channel_pool" => op_case(d(1, 3, 4, 4, 5), seed, faults, |t, v| t.channel_pool(v)),
        "spatial_pool" => op_case(d(2, 3, 4, 3, 4), seed, faults, |t, v| t.spatial_pool(v)),
        "global_pool" => op_case(d(2, 3, 4, 3, 4), seed, faults, |t, v| t.global_pool(v)),
        "max_pool" => {
            let p = MaxPool2d {
                kernel: 3,
                stride: 2,
                padding: 1,
            };
            op_case(d(1, 2, 7, 7, 3), seed, faults, move |t, v| t.max_pool(v, p))
        }
        "sigmoid" => op_case(d(1, 3, 4, 4, 4), seed, faults, |t, v| t.sigmoid(v)),
        "softmax" => {
            // Softmax-weighted branch sum with the branch logits as the checked leaf.
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let logits = (0..3).map(|_| StandardNormal.sample(rng)).map(|z: f64| z as Real).collect();
            let alpha = store.add("alpha", vec![3], logits)?;
            let x = input(d(1, 4, 3, 3, 6), rng)?;
            run(
                &store,
                &x,
                |t, v| {
                    let parts = t.split(v, 3)?;
                    t.softmax_mix(&parts, alpha)
                },
                &RandomProjection { seed },
                seed,
                faults,
            )
        }
        "affine" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let a = Affine::new(&mut store, "affine", 5, 1.0, rng)?;
            jitter(&mut store, 0.5, rng);
            let x = input(d(2, 2, 3, 3, 5), rng)?;
            run(&store, &x, |t, v| a.forward(t, v), &RandomProjection { seed }, seed, faults)
        }
        "batch_norm" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let n = Norm::new(&mut store, "norm", 4, 1.0, rng)?;
            jitter(&mut store, 0.5, rng);
            let x = input(d(2, 3, 3, 3, 4), rng)?;
            run(&store, &x, |t, v| training(t, |t| n.forward(t, v)), &RandomProjection { seed }, seed, faults)
        }
        "pmm" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let m = Pmm::new(&mut store, "pmm", 8, 2, rng)?;
            jitter(&mut store, 0.1, rng);
            let x = input(d(1, 4, 5, 5, 8), rng)?;
            run(&store, &x, |t, v| m.forward(t, v), &RandomProjection { seed }, seed, faults)
        }
        "lmm" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let m = Lmm::new(&mut store, "lmm", 3, rng)?;
            jitter(&mut store, 0.1, rng);
            let x = input(d(1, 4, 6, 6, 8), rng)?;
            run(&store, &x, |t, v| m.forward(t, v), &RandomProjection { seed }, seed, faults)
        }
        "gmm" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let m = Gmm::new(&mut store, "gmm", 16, 2, rng)?;
            jitter(&mut store, 0.1, rng);
            let x = input(d(1, 8, 4, 4, 16), rng)?;
            run(&store, &x, |t, v| m.forward(t, v), &RandomProjection { seed }, seed, faults)
        }
        "gscm" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let m = Gscm::new(&mut store, "gscm", GscmConfig::new(16), rng)?;
            jitter(&mut store, 0.1, rng);
            let x = input(d(1, 4, 4, 4, 16), rng)?;
            run(&store, &x, |t, v| m.forward(t, v), &RandomProjection { seed }, seed, faults)
        }
        "mtcm" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let m = Mtcm::new(&mut store, "mtcm", MtcmConfig::new(8), rng)?;
            jitter(&mut store, 0.1, rng);
            let x = input(d(1, 4, 3, 3, 8), rng)?;
            run(&store, &x, |t, v| m.forward(t, v), &RandomProjection { seed }, seed, faults)
        }
        "block" => {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let spec = BlockSpec {
                in_channels: 8,
                bottleneck_channels: 16,
                out_channels: 16,
                spatial_stride: 2,
                insert_can: true,
            };
            let b = Block::new(&mut store, "block", &spec, &CanOptions::FULL, rng)?;
            jitter(&mut store, 0.05, rng);
            let x = input(d(1, 4, 6, 6, 8), rng)?;
            run(&store, &x, |t, v| training(t, |t| b.forward(t, v)), &RandomProjection { seed }, seed, faults)
        }
        "tinycan" => {
            let spec = NetSpec::named("tinycan")?.with_input(4, 8, 8);
            let mut store = ParamStore::new();
            let model = Model::new(&spec, &mut store, seed)?;
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            jitter(&mut store, 0.05, rng);
            let x = VideoTensor::uniform(d(2, 4, 8, 8, 1), 0.0, 1.0, rng)?;
            let labels = vec![seed as usize % 5, (seed as usize + 2) % 5];
            run(&store, &x, |t, v| training(t, |t| model.forward(t, v)), &CrossEntropy { labels }, seed, faults)
        }
        other => Err(Error::Config(format!("unknown gradient-check case {other:?}"))),
    }
}

/// Every case in `cases` at every seed, in order.
pub fn check_all(cases: &[&str], seeds: &[u64], faults: Faults) -> Result<Vec<CaseResult>> {
    if cases.is_empty() {
        return Err(Error::Config("no gradient-check cases selected".into()));
    }
    let mut out = Vec::new();
    for &case in cases {
        for &seed in seeds {
            out.push(CaseResult {
                case: case.to_string(),
                seed,
                report: check(case, seed, faults)?,
            });
        }
    }
    Ok(out)
}
