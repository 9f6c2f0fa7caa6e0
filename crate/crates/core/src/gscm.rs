//! Group spatial cue module: four channel groups, the first passed through untouched,
//! the others recalibrated by pointwise (PMM), local (LMM) and global (GMM) motion
//! attention.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::nn::Conv;
use crate::ops::conv::ConvGeometry;
use crate::params::ParamStore;
use crate::tensor::{Real, VideoTensor};

pub const GROUPS: usize = 4;

fn check_reduction(cg: usize, r: usize, what: &str) -> Result<()> {
    if r == 0 || !cg.is_multiple_of(r) || cg < r {
        return shape_err(format!("{what}: group width {cg} not divisible by reduction {r}"));
    }
    Ok(())
}

fn check_width(tape: &Tape, x: Var, expect: usize, what: &str) -> Result<()> {
    let c = tape.value(x).dims().c;
    if c != expect {
        return shape_err(format!("{what} built for {expect} channels, got {c}"));
    }
    Ok(())
}

/// Pointwise motion module: attention at full `(T, H, W, C_g)` resolution from
/// appearance and its temporal difference.
#[derive(Clone, Debug)]
pub struct Pmm {
    pub channels: usize,
    pub reduce: Conv,
    pub temporal: Conv,
    pub expand: Conv,
}

impl Pmm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        check_reduction(channels, reduction, "PMM")?;
        let cr = channels / reduction;
        Ok(Pmm {
            channels,
            reduce: Conv::new(store, &format!("{name}.reduce"), ConvGeometry::pointwise(channels, cr), true, 1.0, rng)?,
            temporal: Conv::new(store, &format!("{name}.temporal"), ConvGeometry::temporal(2 * cr, cr, 3, 1, 1), true, 1.0, rng)?,
            expand: Conv::new(store, &format!("{name}.expand"), ConvGeometry::pointwise(cr, channels), true, 1.0, rng)?,
        })
    }

    /// Pre-sigmoid attention logits, `(N, T, H, W, C_g)`.
    pub fn attention_logits(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        check_width(tape, f, self.channels, "PMM")?;
        let reduced = self.reduce.forward(tape, f)?;
        let diff = tape.temporal_diff(reduced)?;
        let joined = tape.concat(&[reduced, diff])?;
        let mixed = self.temporal.forward(tape, joined)?;
        self.expand.forward(tape, mixed)
    }

    pub fn forward(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let logits = self.attention_logits(tape, f)?;
        let attention = tape.sigmoid(logits)?;
        tape.recalibrate(attention, f)
    }

    pub fn suppress(&self, store: &mut ParamStore, bias: Real) {
        self.expand.set_constant_output(store, bias);
    }

    pub fn param_count(&self) -> u64 {
        self.reduce.param_count() + self.temporal.param_count() + self.expand.param_count()
    }
}

/// Local motion module: one channel-shared attention map from a 3-D convolution over
/// the per-site channel mean and max.
#[derive(Clone, Debug)]
pub struct Lmm {
    pub conv: Conv,
}

impl Lmm {
    /// `spatial_kernel` is the `k` of the `3 × k × k` convolution (3 by default).
    pub fn new(store: &mut ParamStore, name: &str, spatial_kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if spatial_kernel.is_multiple_of(2) {
            return shape_err(format!("LMM spatial kernel must be odd, got {spatial_kernel}"));
        }
        let g = ConvGeometry::same(2, 1, [3, spatial_kernel, spatial_kernel], [1, 1, 1], 1);
        Ok(Lmm {
            conv: Conv::new(store, &format!("{name}.conv"), g, true, 1.0, rng)?,
        })
    }

    /// Pre-sigmoid attention logits, `(N, T, H, W, 1)`.
    pub fn attention_logits(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let pooled = tape.channel_pool(f)?;
        self.conv.forward(tape, pooled)
    }

    pub fn forward(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let logits = self.attention_logits(tape, f)?;
        let attention = tape.sigmoid(logits)?;
        tape.recalibrate(attention, f)
    }

    pub fn suppress(&self, store: &mut ParamStore, bias: Real) {
        self.conv.set_constant_output(store, bias);
    }

    pub fn param_count(&self) -> u64 {
        self.conv.param_count()
    }
}

/// Global motion module: attention per `(t, c)` from the spatially averaged
/// descriptor, shared by every pixel of a frame.
#[derive(Clone, Debug)]
pub struct Gmm {
    pub channels: usize,
    pub reduce: Conv,
    pub temporal: Conv,
    pub expand: Conv,
}

impl Gmm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        check_reduction(channels, reduction, "GMM")?;
        let cr = channels / reduction;
        Ok(Gmm {
            channels,
            reduce: Conv::new(store, &format!("{name}.reduce"), ConvGeometry::temporal(channels, cr, 1, 1, 1), true, 1.0, rng)?,
            temporal: Conv::new(store, &format!("{name}.temporal"), ConvGeometry::temporal(2 * cr, cr, 3, 1, 1), true, 1.0, rng)?,
            expand: Conv::new(store, &format!("{name}.expand"), ConvGeometry::temporal(cr, channels, 1, 1, 1), true, 1.0, rng)?,
        })
    }

    /// Pre-sigmoid attention logits, `(N, T, 1, 1, C_g)`.
    pub fn attention_logits(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        check_width(tape, f, self.channels, "GMM")?;
        let squeezed = tape.spatial_pool(f)?;
        let reduced = self.reduce.forward(tape, squeezed)?;
        let diff = tape.temporal_diff(reduced)?;
        let joined = tape.concat(&[reduced, diff])?;
        let mixed = self.temporal.forward(tape, joined)?;
        self.expand.forward(tape, mixed)
    }

    pub fn forward(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let logits = self.attention_logits(tape, f)?;
        let attention = tape.sigmoid(logits)?;
        tape.recalibrate(attention, f)
    }

    pub fn suppress(&self, store: &mut ParamStore, bias: Real) {
        self.expand.set_constant_output(store, bias);
    }

    pub fn param_count(&self) -> u64 {
        self.reduce.param_count() + self.temporal.param_count() + self.expand.param_count()
    }
}

/// Which cue paths are active; inactive groups pass through like group 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GscmPaths {
    pub pmm: bool,
    pub lmm: bool,
    pub gmm: bool,
}

impl GscmPaths {
    pub const ALL: GscmPaths = GscmPaths { pmm: true, lmm: true, gmm: true };
    pub const NONE: GscmPaths = GscmPaths { pmm: false, lmm: false, gmm: false };

    pub fn any(&self) -> bool {
        self.pmm || self.lmm || self.gmm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GscmConfig {
    pub channels: usize,
    pub reduction: usize,
    pub lmm_kernel: usize,
    pub paths: GscmPaths,
}

impl GscmConfig {
    pub fn new(channels: usize) -> Self {
        GscmConfig {
            channels,
            reduction: 2,
            lmm_kernel: 3,
            paths: GscmPaths::ALL,
        }
    }

    pub fn group_width(&self) -> usize {
        self.channels / GROUPS
    }

    pub fn validate(&self) -> Result<()> {
        if !self.channels.is_multiple_of(GROUPS) || self.channels == 0 {
            return shape_err(format!("GSCM channels {} not divisible by {GROUPS}", self.channels));
        }
        if self.paths.pmm || self.paths.gmm {
            check_reduction(self.group_width(), self.reduction, "GSCM")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Gscm {
    pub config: GscmConfig,
    pub pmm: Option<Pmm>,
    pub lmm: Option<Lmm>,
    pub gmm: Option<Gmm>,
}

impl Gscm {
    pub fn new(store: &mut ParamStore, name: &str, config: GscmConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let cg = config.group_width();
        let r = config.reduction;
        let pmm = config
            .paths
            .pmm
            .then(|| Pmm::new(store, &format!("{name}.pmm"), cg, r, rng))
            .transpose()?;
        let lmm = config
            .paths
            .lmm
            .then(|| Lmm::new(store, &format!("{name}.lmm"), config.lmm_kernel, rng))
            .transpose()?;
        let gmm = config
            .paths
            .gmm
            .then(|| Gmm::new(store, &format!("{name}.gmm"), cg, r, rng))
            .transpose()?;
        Ok(Gscm { config, pmm, lmm, gmm })
    }

    pub fn forward(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let c = tape.value(f).dims().c;
        if c != self.config.channels {
            return shape_err(format!("GSCM built for {} channels, got {c}", self.config.channels));
        }
        let groups = tape.split(f, GROUPS)?;
        let g2 = match &self.pmm {
            Some(m) => m.forward(tape, groups[1])?,
            None => groups[1],
        };
        let g3 = match &self.lmm {
            Some(m) => m.forward(tape, groups[2])?,
            None => groups[2],
        };
        let g4 = match &self.gmm {
            Some(m) => m.forward(tape, groups[3])?,
            None => groups[3],
        };
        tape.concat(&[groups[0], g2, g3, g4])
    }

    pub fn apply(&self, store: &ParamStore, f: &VideoTensor) -> Result<VideoTensor> {
        crate::autograd::evaluate(store, f, |t, v| self.forward(t, v))
    }

    pub fn suppress(&self, store: &mut ParamStore, bias: Real) {
        if let Some(m) = &self.pmm {
            m.suppress(store, bias);
        }
        if let Some(m) = &self.lmm {
            m.suppress(store, bias);
        }
        if let Some(m) = &self.gmm {
            m.suppress(store, bias);
        }
    }

    pub fn param_count(&self) -> u64 {
        self.pmm.as_ref().map_or(0, Pmm::param_count)
            + self.lmm.as_ref().map_or(0, Lmm::param_count)
            + self.gmm.as_ref().map_or(0, Gmm::param_count)
    }
}

/// Learnable scalars of a PMM on `cg` channels: reduce, length-3 temporal conv over the
/// appearance/difference pair, expand; all with bias.
pub fn pmm_param_count(cg: u64, reduction: u64) -> u64 {
    let cr = cg / reduction;
    (cg * cr + cr) + (3 * 2 * cr * cr + cr) + (cr * cg + cg)
}

/// Learnable scalars of a GMM on `cg` channels (kernel-1, kernel-3, kernel-1 temporal
/// convolutions over the squeezed descriptor).
pub fn gmm_param_count(cg: u64, reduction: u64) -> u64 {
    let cr = cg / reduction;
    let reduce = cg * cr + cr;
    let temporal = 3 * (2 * cr) * cr + cr;
    let expand = cr * cg + cg;
    reduce + temporal + expand
}

/// Learnable scalars of an LMM with a `3 × k × k` kernel from 2 pooled channels to 1.
pub fn lmm_param_count(spatial_kernel: u64) -> u64 {
    3 * spatial_kernel * spatial_kernel * 2 + 1
}

pub fn gscm_param_count(channels: u64, reduction: u64, lmm_kernel: u64, paths: GscmPaths) -> u64 {
    let cg = channels / GROUPS as u64;
    let mut total = 0;
    if paths.pmm {
        total += pmm_param_count(cg, reduction);
    }
    if paths.lmm {
        total += lmm_param_count(lmm_kernel);
    }
    if paths.gmm {
        total += gmm_param_count(cg, reduction);
    }
    total
}
