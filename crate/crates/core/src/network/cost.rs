//! Analytic parameter and multiply-accumulate accounting.
//!
//! One reported "FLOP" is one multiply-accumulate. Only convolutions (including the
//! classifier, a 1×1×1 convolution on pooled features) contribute MACs; affine,
//! pooling, activation and elementwise ops are counted as free.

use crate::error::Result;
use crate::gscm::GROUPS;
use crate::mtcm::BRANCH_KERNEL;
use crate::network::model::{block_name, STEM_POOL};
use crate::network::spec::NetSpec;
use crate::nn::conv_param_count;
use crate::ops::conv::{conv_macs, ConvGeometry};
use crate::tensor::Dims;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    /// Per clip of `frames` frames.
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub spec_name: String,
    pub frames: usize,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl CostReport {
    /// Sum of rows whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.macs))
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn giga_macs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }
}

struct Counter {
    rows: Vec<CostRow>,
}

impl Counter {
    fn conv(&mut self, name: String, g: ConvGeometry, bias: bool, input: Dims) -> Result<Dims> {
        let out = g.output_dims(input)?;
        self.rows.push(CostRow {
            name,
            params: conv_param_count(&g, bias),
            macs: conv_macs(&g, out),
        });
        Ok(out)
    }

    fn affine(&mut self, name: String, channels: usize) {
        self.rows.push(CostRow {
            name,
            params: 2 * channels as u64,
            macs: 0,
        });
    }

    fn scalars(&mut self, name: String, count: usize) {
        self.rows.push(CostRow {
            name,
            params: count as u64,
            macs: 0,
        });
    }
}

pub fn count_cost(spec: &NetSpec) -> Result<CostReport> {
    spec.validate()?;
    let mut k = Counter { rows: Vec::new() };
    let st = &spec.stem;
    let input = Dims::new(1, spec.frames, spec.height, spec.width, spec.in_channels);
    let mut d = k.conv("stem.conv.weight".into(), ConvGeometry::spatial(spec.in_channels, st.out_channels, st.kernel, st.stride), false, input)?;
    k.affine("stem.bn".into(), st.out_channels);
    if st.max_pool {
        d = STEM_POOL.output_dims(d)?;
    }
    let can = &spec.can;
    let r = can.reduction;
    for (s, b, bs) in spec.blocks() {
        let name = block_name(s, b);
        let w = bs.bottleneck_channels;
        let block_in = d;
        let h = k.conv(format!("{name}.conv1"), ConvGeometry::pointwise(bs.in_channels, w), false, d)?;
        k.affine(format!("{name}.bn1"), w);
        let h = k.conv(format!("{name}.conv2"), ConvGeometry::spatial(w, w, 3, bs.spatial_stride), false, h)?;
        k.affine(format!("{name}.bn2"), w);
        if bs.insert_can && can.gscm.any() {
            let cg = w / GROUPS;
            let cr = cg / r.max(1);
            let group = h.with_c(cg);
            if can.gscm.pmm {
                let p = format!("{name}.gscm.pmm");
                let t = k.conv(format!("{p}.reduce"), ConvGeometry::pointwise(cg, cr), true, group)?;
                let t = k.conv(format!("{p}.temporal"), ConvGeometry::temporal(2 * cr, cr, 3, 1, 1), true, t.with_c(2 * cr))?;
                k.conv(format!("{p}.expand"), ConvGeometry::pointwise(cr, cg), true, t)?;
            }
            if can.gscm.lmm {
                let g = ConvGeometry::same(2, 1, [3, can.lmm_kernel, can.lmm_kernel], [1, 1, 1], 1);
                k.conv(format!("{name}.gscm.lmm.conv"), g, true, h.with_c(2))?;
            }
            if can.gscm.gmm {
                let p = format!("{name}.gscm.gmm");
                let squeezed = Dims::new(h.n, h.t, 1, 1, cg);
                let t = k.conv(format!("{p}.reduce"), ConvGeometry::temporal(cg, cr, 1, 1, 1), true, squeezed)?;
                let t = k.conv(format!("{p}.temporal"), ConvGeometry::temporal(2 * cr, cr, 3, 1, 1), true, t.with_c(2 * cr))?;
                k.conv(format!("{p}.expand"), ConvGeometry::temporal(cr, cg, 1, 1, 1), true, t)?;
            }
        }
        if bs.insert_can && can.mtcm {
            let p = format!("{name}.mtcm");
            let cr = w / r;
            let t = k.conv(format!("{p}.reduce"), ConvGeometry::pointwise(w, cr), true, h)?;
            for dil in 1..=can.branches {
                k.conv(format!("{p}.branch{dil}"), ConvGeometry::temporal(cr, cr, BRANCH_KERNEL, dil, cr), false, t)?;
            }
            k.scalars(format!("{p}.alpha"), can.branches);
            k.conv(format!("{p}.expand"), ConvGeometry::pointwise(cr, w), true, t)?;
        }
        d = k.conv(format!("{name}.conv3"), ConvGeometry::pointwise(w, bs.out_channels), false, h)?;
        k.affine(format!("{name}.bn3"), bs.out_channels);
        if bs.needs_projection() {
            let g = ConvGeometry::spatial(bs.in_channels, bs.out_channels, 1, bs.spatial_stride);
            k.conv(format!("{name}.shortcut.conv"), g, false, block_in)?;
            k.affine(format!("{name}.shortcut.bn"), bs.out_channels);
        }
    }
    let pooled = Dims::new(1, 1, 1, 1, d.c);
    k.conv("fc".into(), ConvGeometry::pointwise(d.c, spec.num_classes), true, pooled)?;
    let total_params = k.rows.iter().map(|r| r.params).sum();
    let total_macs = k.rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        spec_name: spec.name.clone(),
        frames: spec.frames,
        rows: k.rows,
        total_params,
        total_macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::Model;
    use crate::params::ParamStore;

    #[test]
    fn tiny_report_matches_instantiated_scalars() {
        for name in ["tinycan", "tinycan-baseline"] {
            let spec = NetSpec::named(name).unwrap();
            let mut store = ParamStore::new();
            Model::new(&spec, &mut store, 0).unwrap();
            let report = count_cost(&spec).unwrap();
            assert_eq!(report.total_params, store.scalar_count());
            assert_eq!(report.total_params, report.rows.iter().map(|r| r.params).sum::<u64>());
        }
    }

    #[test]
    fn stock_resnet50_backbone() {
        // 25,557,032 scalars for the 1000-class torchvision layout, minus the classifier.
        let report = count_cost(&NetSpec::named("resnet50").unwrap()).unwrap();
        let fc = (2048 * 48 + 48) as u64;
        assert_eq!(report.total_params - fc, 25_557_032 - (2048 * 1000 + 1000));
    }

    #[test]
    fn macs_scale_with_frames() {
        let s8 = count_cost(&NetSpec::named("resnet50can").unwrap()).unwrap();
        let s16 = count_cost(&NetSpec::named("resnet50can").unwrap().with_frames(16)).unwrap();
        assert_eq!(s8.total_params, s16.total_params);
        let fc = s8.rows.last().unwrap().macs;
        assert_eq!(s16.total_macs - fc, 2 * (s8.total_macs - fc));
    }
}
