//! Parameterized layers: thin handles pairing a geometry with bundles in a store.

use rand::Rng;

use crate::autograd::{BatchStats, Tape, Var};
use crate::error::Result;
use crate::ops::conv::{ConvGeometry, ConvKernel};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct Conv {
    pub geometry: ConvGeometry,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    /// Weights drawn from `N(0, gain² / fan_in)`, bias zero.
    pub fn new(store: &mut ParamStore, name: &str, geometry: ConvGeometry, bias: bool, gain: Real, rng: &mut impl Rng) -> Result<Self> {
        geometry.validate()?;
        let fan_in = geometry.in_per_group() * geometry.kernel_volume();
        let weight = store.add_init(format!("{name}.weight"), geometry.weight_dims(), Init::Normal { fan_in, gain }, rng)?;
        let bias = if bias {
            Some(store.add_init(format!("{name}.bias"), vec![geometry.out_channels], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Conv { geometry, weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv(x, self.geometry, self.weight, self.bias)
    }

    /// Standalone kernel with the current weights; a missing bias becomes zeros.
    pub fn kernel(&self, store: &ParamStore) -> ConvKernel {
        let bias = match self.bias {
            Some(b) => store.value(b).to_vec(),
            None => vec![0.0; self.geometry.out_channels],
        };
        ConvKernel {
            geometry: self.geometry,
            weights: store.value(self.weight).to_vec(),
            bias,
        }
    }

    pub fn param_count(&self) -> u64 {
        conv_param_count(&self.geometry, self.bias.is_some())
    }

    /// Zero the weights and set every bias entry to `bias`, so the layer outputs the
    /// constant `bias`.
    pub fn set_constant_output(&self, store: &mut ParamStore, bias: Real) {
        store.value_mut(self.weight).fill(0.0);
        if let Some(b) = self.bias {
            store.value_mut(b).fill(bias);
        }
    }
}

pub fn conv_param_count(g: &ConvGeometry, bias: bool) -> u64 {
    g.weight_len() as u64 + if bias { g.out_channels as u64 } else { 0 }
}

/// Per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct Affine {
    pub channels: usize,
    pub scale: ParamId,
    pub shift: ParamId,
}

impl Affine {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, scale: Real, rng: &mut impl Rng) -> Result<Self> {
        Ok(Affine {
            channels,
            scale: store.add_init(format!("{name}.scale"), vec![channels], Init::Constant(scale), rng)?,
            shift: store.add_init(format!("{name}.shift"), vec![channels], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.affine(x, self.scale, self.shift)
    }
}

/// Batch normalization: per-channel standardization (batch statistics while
/// training, running averages at inference) followed by a learnable [`Affine`].
#[derive(Clone, Debug)]
pub struct Norm {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub affine: Affine,
}

/// Weight of the newest batch in the running averages.
pub const NORM_MOMENTUM: Real = 0.1;

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, scale: Real, rng: &mut impl Rng) -> Result<Self> {
        let affine = Affine::new(store, name, channels, scale, rng)?;
        Ok(Norm {
            running_mean: store.add_buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels])?,
            running_var: store.add_buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels])?,
            affine,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.batch_norm(x, self.running_mean, self.running_var)?;
        self.affine.forward(tape, y)
    }
}

/// Fold recorded batch statistics into their running buffers. The variance is
/// stored unbiased.
pub fn update_running_stats(store: &mut ParamStore, stats: &[BatchStats]) {
    for s in stats {
        let unbias = if s.count > 1 { s.count as Real / (s.count - 1) as Real } else { 1.0 };
        for (r, m) in store.value_mut(s.running_mean).iter_mut().zip(&s.mean) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * m;
        }
        for (r, v) in store.value_mut(s.running_var).iter_mut().zip(&s.var) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * v * unbias;
        }
    }
}
