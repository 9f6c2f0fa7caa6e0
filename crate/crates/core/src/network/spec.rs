//! Declarative network descriptions and the named instances.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gscm::GscmPaths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StemSpec {
    pub out_channels: usize,
    /// Square spatial kernel of the per-frame stem convolution.
    pub kernel: usize,
    pub stride: usize,
    /// 3×3 stride-2 max pooling after the stem (ResNet-style).
    pub max_pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub bottleneck_channels: usize,
    pub out_channels: usize,
    pub spatial_stride: usize,
    /// Insert GSCM → MTCM between the 3×3 convolution and the final 1×1 expansion.
    pub insert_can: bool,
}

impl BlockSpec {
    pub fn needs_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.spatial_stride != 1
    }
}

/// Which attention modules a network carries, and their hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CanOptions {
    pub mtcm: bool,
    pub gscm: GscmPaths,
    pub branches: usize,
    pub reduction: usize,
    pub lmm_kernel: usize,
}

impl CanOptions {
    pub const FULL: CanOptions = CanOptions {
        mtcm: true,
        gscm: GscmPaths::ALL,
        branches: 3,
        reduction: 2,
        lmm_kernel: 3,
    };
    pub const NONE: CanOptions = CanOptions {
        mtcm: false,
        gscm: GscmPaths::NONE,
        ..CanOptions::FULL
    };

    pub fn any(&self) -> bool {
        self.mtcm || self.gscm.any()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetSpec {
    pub name: String,
    pub in_channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub stem: StemSpec,
    pub stages: Vec<Vec<BlockSpec>>,
    pub num_classes: usize,
    pub can: CanOptions,
}

/// Names accepted by [`NetSpec::named`].
pub const SPEC_NAMES: &[&str] = &[
    "tinycan",
    "tinycan-baseline",
    "resnet50can",
    "resnet50",
    "resnet50-mtcm",
    "resnet50-gscm",
    "resnet50-pmm",
    "resnet50-lmm",
    "resnet50-gmm",
];

/// Class count of the ResNet-50 cost-accounting instances.
pub const RESNET50_CLASSES: usize = 48;

fn stage(blocks: usize, in_channels: usize, width: usize, expansion: usize, stride: usize, can: bool) -> Vec<BlockSpec> {
    (0..blocks)
        .map(|i| BlockSpec {
            in_channels: if i == 0 { in_channels } else { width * expansion },
            bottleneck_channels: width,
            out_channels: width * expansion,
            spatial_stride: if i == 0 { stride } else { 1 },
            insert_can: can,
        })
        .collect()
}

impl NetSpec {
    pub fn named(name: &str) -> Result<NetSpec> {
        let spec = match name {
            "tinycan" => Self::tiny(CanOptions::FULL),
            "tinycan-baseline" => Self::tiny(CanOptions::NONE),
            "resnet50can" => Self::resnet50(CanOptions::FULL),
            "resnet50" => Self::resnet50(CanOptions::NONE),
            "resnet50-mtcm" => Self::resnet50(CanOptions { gscm: GscmPaths::NONE, ..CanOptions::FULL }),
            "resnet50-gscm" => Self::resnet50(CanOptions { mtcm: false, ..CanOptions::FULL }),
            "resnet50-pmm" => Self::resnet50(CanOptions {
                mtcm: false,
                gscm: GscmPaths { pmm: true, lmm: false, gmm: false },
                ..CanOptions::FULL
            }),
            "resnet50-lmm" => Self::resnet50(CanOptions {
                mtcm: false,
                gscm: GscmPaths { pmm: false, lmm: true, gmm: false },
                ..CanOptions::FULL
            }),
            "resnet50-gmm" => Self::resnet50(CanOptions {
                mtcm: false,
                gscm: GscmPaths { pmm: false, lmm: false, gmm: true },
                ..CanOptions::FULL
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown network {other:?}; expected one of {}",
                    SPEC_NAMES.join(", ")
                )))
            }
        };
        Ok(NetSpec {
            name: name.to_string(),
            ..spec
        })
    }

    /// Desk-scale network: grayscale 8×32×32 clips, three stages of two blocks.
    pub fn tiny(can: CanOptions) -> NetSpec {
        let with = can.any();
        NetSpec {
            name: String::new(),
            in_channels: 1,
            frames: 8,
            height: 32,
            width: 32,
            stem: StemSpec {
                out_channels: 16,
                kernel: 3,
                stride: 2,
                max_pool: false,
            },
            stages: vec![
                stage(2, 16, 16, 1, 1, with),
                stage(2, 16, 32, 1, 2, with),
                stage(2, 32, 64, 1, 2, with),
            ],
            num_classes: 5,
            can,
        }
    }

    /// ResNet-50 layout (per-frame 2-D backbone) at 8×224×224.
    pub fn resnet50(can: CanOptions) -> NetSpec {
        let with = can.any();
        NetSpec {
            name: String::new(),
            in_channels: 3,
            frames: 8,
            height: 224,
            width: 224,
            stem: StemSpec {
                out_channels: 64,
                kernel: 7,
                stride: 2,
                max_pool: true,
            },
            stages: vec![
                stage(3, 64, 64, 4, 1, with),
                stage(4, 256, 128, 4, 2, with),
                stage(6, 512, 256, 4, 2, with),
                stage(3, 1024, 512, 4, 2, with),
            ],
            num_classes: RESNET50_CLASSES,
            can,
        }
    }

    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    pub fn with_input(mut self, frames: usize, height: usize, width: usize) -> Self {
        self.frames = frames;
        self.height = height;
        self.width = width;
        self
    }

    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &BlockSpec)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(s, blocks)| blocks.iter().enumerate().map(move |(b, spec)| (s, b, spec)))
    }

    pub fn feature_channels(&self) -> usize {
        self.stages
            .last()
            .and_then(|s| s.last())
            .map_or(self.stem.out_channels, |b| b.out_channels)
    }

    /// Stable 64-bit digest of the full description.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!("degenerate network input in {}", self.name)));
        }
        let mut c = self.stem.out_channels;
        for (s, b, blk) in self.blocks() {
            if blk.in_channels != c {
                return Err(Error::Config(format!(
                    "stage {s} block {b} expects {} channels, previous layer gives {c}",
                    blk.in_channels
                )));
            }
            c = blk.out_channels;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_instances_are_consistent() {
        for name in SPEC_NAMES {
            let s = NetSpec::named(name).unwrap();
            s.validate().unwrap();
            assert_eq!(&s.name, name);
        }
        assert!(NetSpec::named("vgg").is_err());
    }

    #[test]
    fn hash_distinguishes_variants() {
        let a = NetSpec::named("tinycan").unwrap();
        let b = NetSpec::named("tinycan-baseline").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), NetSpec::named("tinycan").unwrap().hash());
    }

    #[test]
    fn tiny_can_widths_divisible_by_four_r() {
        let s = NetSpec::named("tinycan").unwrap();
        for (_, _, b) in s.blocks() {
            assert_eq!(b.bottleneck_channels % (4 * s.can.reduction), 0);
        }
    }
}
