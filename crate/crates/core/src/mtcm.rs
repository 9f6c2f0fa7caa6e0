//! Multi-scale temporal cue module.
//!
//! ```text
//! reduced   = conv1x1x1(g)                         C → C/r
//! fused     = Σᵢ softmax(α)ᵢ · dwconv_i(reduced)    kernel 3 along T, dilation i
//! attention = σ(conv1x1x1(fused))                  C/r → C
//! out       = attention ⊙ g + g
//! ```

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::nn::Conv;
use crate::ops::conv::ConvGeometry;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, VideoTensor};

/// Temporal kernel length of every branch.
pub const BRANCH_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MtcmConfig {
    pub channels: usize,
    pub branches: usize,
    pub reduction: usize,
}

impl MtcmConfig {
    pub fn new(channels: usize) -> Self {
        MtcmConfig {
            channels,
            branches: 3,
            reduction: 2,
        }
    }

    pub fn reduced(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 {
            return shape_err("MTCM needs at least one branch");
        }
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) || self.channels < self.reduction {
            return shape_err(format!(
                "MTCM channels {} not divisible by reduction {}",
                self.channels, self.reduction
            ));
        }
        Ok(())
    }
}

/// Parameter handles of one MTCM instance.
#[derive(Clone, Debug)]
pub struct Mtcm {
    pub config: MtcmConfig,
    pub reduce: Conv,
    /// Branch `i` (0-based) has temporal dilation `i + 1`.
    pub branches: Vec<Conv>,
    pub alpha: ParamId,
    pub expand: Conv,
}

impl Mtcm {
    pub fn new(store: &mut ParamStore, name: &str, config: MtcmConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (c, cr) = (config.channels, config.reduced());
        let reduce = Conv::new(store, &format!("{name}.reduce"), ConvGeometry::pointwise(c, cr), true, 1.0, rng)?;
        let branches = (1..=config.branches)
            .map(|d| {
                let g = ConvGeometry::temporal(cr, cr, BRANCH_KERNEL, d, cr);
                Conv::new(store, &format!("{name}.branch{d}"), g, false, 1.0, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = config.branches;
        let alpha = store.add(format!("{name}.alpha"), vec![n], vec![1.0 / n as Real; n])?;
        let expand = Conv::new(store, &format!("{name}.expand"), ConvGeometry::pointwise(cr, c), true, 1.0, rng)?;
        Ok(Mtcm {
            config,
            reduce,
            branches,
            alpha,
            expand,
        })
    }

    pub fn forward(&self, tape: &mut Tape, g: Var) -> Result<Var> {
        let c = tape.value(g).dims().c;
        if c != self.config.channels {
            return shape_err(format!("MTCM built for {} channels, got {c}", self.config.channels));
        }
        let reduced = self.reduce.forward(tape, g)?;
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(tape, reduced))
            .collect::<Result<Vec<_>>>()?;
        let fused = tape.softmax_mix(&outs, self.alpha)?;
        let logits = self.expand.forward(tape, fused)?;
        let attention = tape.sigmoid(logits)?;
        tape.recalibrate(attention, g)
    }

    /// Forward pass on a concrete tensor.
    pub fn apply(&self, store: &ParamStore, g: &VideoTensor) -> Result<VideoTensor> {
        crate::autograd::evaluate(store, g, |t, v| self.forward(t, v))
    }

    /// Drive the attention to σ(`bias`) everywhere.
    pub fn suppress(&self, store: &mut ParamStore, bias: Real) {
        self.expand.set_constant_output(store, bias);
    }

    pub fn param_count(&self) -> u64 {
        self.reduce.param_count()
            + self.branches.iter().map(Conv::param_count).sum::<u64>()
            + self.config.branches as u64
            + self.expand.param_count()
    }
}

/// Learnable scalars of one MTCM: reduce (weights + bias), `n` bias-free depthwise
/// branches of length 3, `n` branch logits, and expand (weights + bias).
pub fn mtcm_param_count(channels: u64, branches: u64, reduction: u64) -> u64 {
    let cr = channels / reduction;
    let reduce = channels * cr + cr;
    let branch = BRANCH_KERNEL as u64 * cr;
    let expand = cr * channels + channels;
    reduce + branches * branch + branches + expand
}
