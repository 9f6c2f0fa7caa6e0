use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::gscm::{Gscm, GscmConfig};
use crate::mtcm::{Mtcm, MtcmConfig};
use crate::network::spec::{BlockSpec, CanOptions, NetSpec};
use crate::nn::{Conv, Norm};
use crate::ops::conv::ConvGeometry;
use crate::ops::pool::MaxPool2d;
use crate::params::ParamStore;
use crate::tensor::{Real, VideoTensor};

pub(crate) const STEM_POOL: MaxPool2d = MaxPool2d {
    kernel: 3,
    stride: 2,
    padding: 1,
};

/// Scale given to the last affine of every residual branch at initialization, so a
/// fresh network starts close to its shortcut path.
const BRANCH_OUT_SCALE: Real = 0.2;

const RELU_GAIN: Real = std::f64::consts::SQRT_2 as Real;

#[derive(Clone, Debug)]
pub struct Block {
    pub spec: BlockSpec,
    pub conv1: Conv,
    pub bn1: Norm,
    pub conv2: Conv,
    pub bn2: Norm,
    pub gscm: Option<Gscm>,
    pub mtcm: Option<Mtcm>,
    pub conv3: Conv,
    pub bn3: Norm,
    pub shortcut: Option<(Conv, Norm)>,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, bs: &BlockSpec, can: &CanOptions, rng: &mut impl Rng) -> Result<Self> {
        let w = bs.bottleneck_channels;
        let conv1 = Conv::new(store, &format!("{name}.conv1"), ConvGeometry::pointwise(bs.in_channels, w), false, RELU_GAIN, rng)?;
        let bn1 = Norm::new(store, &format!("{name}.bn1"), w, 1.0, rng)?;
        let conv2 = Conv::new(store, &format!("{name}.conv2"), ConvGeometry::spatial(w, w, 3, bs.spatial_stride), false, RELU_GAIN, rng)?;
        let bn2 = Norm::new(store, &format!("{name}.bn2"), w, 1.0, rng)?;
        let (gscm, mtcm) = if bs.insert_can {
            let gscm = can
                .gscm
                .any()
                .then(|| {
                    let cfg = GscmConfig {
                        channels: w,
                        reduction: can.reduction,
                        lmm_kernel: can.lmm_kernel,
                        paths: can.gscm,
                    };
                    Gscm::new(store, &format!("{name}.gscm"), cfg, rng)
                })
                .transpose()?;
            let mtcm = can
                .mtcm
                .then(|| {
                    let cfg = MtcmConfig {
                        channels: w,
                        branches: can.branches,
                        reduction: can.reduction,
                    };
                    Mtcm::new(store, &format!("{name}.mtcm"), cfg, rng)
                })
                .transpose()?;
            (gscm, mtcm)
        } else {
            (None, None)
        };
        let conv3 = Conv::new(store, &format!("{name}.conv3"), ConvGeometry::pointwise(w, bs.out_channels), false, 1.0, rng)?;
        let bn3 = Norm::new(store, &format!("{name}.bn3"), bs.out_channels, BRANCH_OUT_SCALE, rng)?;
        let shortcut = if bs.needs_projection() {
            let g = ConvGeometry::spatial(bs.in_channels, bs.out_channels, 1, bs.spatial_stride);
            let conv = Conv::new(store, &format!("{name}.shortcut.conv"), g, false, 1.0, rng)?;
            let bn = Norm::new(store, &format!("{name}.shortcut.bn"), bs.out_channels, 1.0, rng)?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(Block {
            spec: *bs,
            conv1,
            bn1,
            conv2,
            bn2,
            gscm,
            mtcm,
            conv3,
            bn3,
            shortcut,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = self.bn1.forward(tape, h)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, h)?;
        let h = self.bn2.forward(tape, h)?;
        let mut h = tape.relu(h)?;
        if let Some(g) = &self.gscm {
            h = g.forward(tape, h)?;
        }
        if let Some(m) = &self.mtcm {
            h = m.forward(tape, h)?;
        }
        let h = self.conv3.forward(tape, h)?;
        let h = self.bn3.forward(tape, h)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, x)?;
                bn.forward(tape, s)?
            }
            None => x,
        };
        let sum = tape.add(h, skip)?;
        tape.relu(sum)
    }
}

/// Parameter handles for a [`NetSpec`]; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: NetSpec,
    pub stem: Conv,
    pub stem_bn: Norm,
    pub blocks: Vec<Block>,
    pub fc: Conv,
}

pub(crate) fn block_name(stage: usize, block: usize) -> String {
    format!("stage{}.block{}", stage + 1, block)
}

impl Model {
    /// Build the network and register freshly initialized parameters in `store`.
    pub fn new(spec: &NetSpec, store: &mut ParamStore, seed: u64) -> Result<Self> {
        spec.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let st = &spec.stem;
        let stem = Conv::new(store, "stem.conv", ConvGeometry::spatial(spec.in_channels, st.out_channels, st.kernel, st.stride), false, RELU_GAIN, rng)?;
        let stem_bn = Norm::new(store, "stem.bn", st.out_channels, 1.0, rng)?;
        let mut blocks = Vec::new();
        for (s, b, bs) in spec.blocks() {
            blocks.push(Block::new(store, &block_name(s, b), bs, &spec.can, rng)?);
        }
        let fc = Conv::new(store, "fc", ConvGeometry::pointwise(spec.feature_channels(), spec.num_classes), true, 1.0, rng)?;
        Ok(Model {
            spec: spec.clone(),
            stem,
            stem_bn,
            blocks,
            fc,
        })
    }

    /// Logits as `(N, 1, 1, 1, K)`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let d = tape.value(x).dims();
        let s = &self.spec;
        if (d.t, d.h, d.w, d.c) != (s.frames, s.height, s.width, s.in_channels) {
            return shape_err(format!(
                "{} expects clips of (T, H, W, C) = ({}, {}, {}, {}), got {:?}",
                s.name, s.frames, s.height, s.width, s.in_channels, d
            ));
        }
        let h = self.stem.forward(tape, x)?;
        let h = self.stem_bn.forward(tape, h)?;
        let mut h = tape.relu(h)?;
        if s.stem.max_pool {
            h = tape.max_pool(h, STEM_POOL)?;
        }
        for b in &self.blocks {
            h = b.forward(tape, h)?;
        }
        let pooled = tape.global_pool(h)?;
        self.fc.forward(tape, pooled)
    }

    /// One logit row per clip in the batch.
    pub fn logits(&self, store: &ParamStore, x: &VideoTensor) -> Result<Vec<Vec<Real>>> {
        let out = crate::autograd::evaluate(store, x, |t, v| self.forward(t, v))?;
        let k = out.dims().c;
        Ok(out.data().chunks_exact(k).map(<[Real]>::to_vec).collect())
    }

    /// Set every attention path's pre-sigmoid logits to the constant `bias`.
    pub fn suppress_attention(&self, store: &mut ParamStore, bias: Real) {
        for b in &self.blocks {
            if let Some(g) = &b.gscm {
                g.suppress(store, bias);
            }
            if let Some(m) = &b.mtcm {
                m.suppress(store, bias);
            }
        }
    }
}
