use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

/// Which of the three segmentation networks to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Residual 3D U-Net with every activation stored.
    Baseline,
    /// Coupling blocks inside each level; max pooling and trilinear
    /// upsampling between levels.
    PartiallyInvRes,
    /// Coupling blocks, channel splits and learnable invertible resampling
    /// throughout the encoder and decoder.
    FullyInvRes,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Baseline, Arch::PartiallyInvRes, Arch::FullyInvRes];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Baseline => "baseline",
            Arch::PartiallyInvRes => "partially-invres",
            Arch::FullyInvRes => "fully-invres",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "unet" => Ok(Arch::Baseline),
            "partially" | "partially-invres" | "partiallyinvres" => Ok(Arch::PartiallyInvRes),
            "fully" | "fully-invres" | "fullyinvres" => Ok(Arch::FullyInvRes),
            other => Err(Error::arg("arch", format!("unknown architecture `{other}`"))),
        }
    }
}

/// Declarative description of a network and the patch shape it runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Number of resolutions, including the bottom one.
    pub levels: usize,
    /// Channels at the finest level.
    pub base_width: usize,
    pub blocks_per_level: usize,
    /// Conv/norm/activation repeats inside each coupling subnet.
    pub coupling_depth: usize,
    pub vae: bool,
    pub latent_dim: usize,
    /// Spatial extent of one input patch.
    pub patch: [usize; 3],
    pub batch: usize,
    /// Seed of the parameter initializers.
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Arch::FullyInvRes,
            in_channels: 2,
            num_classes: 3,
            levels: 4,
            base_width: 16,
            blocks_per_level: 2,
            coupling_depth: 1,
            vae: true,
            latent_dim: 64,
            patch: [32, 32, 32],
            batch: 1,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: alloc::string::String| Err(Error::InvalidSpec(reason));
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.base_width < 2 || !self.base_width.is_multiple_of(2) {
            return bad(format!("base width must be even and positive, got {}", self.base_width));
        }
        if self.in_channels == 0 || self.num_classes < 2 || self.batch == 0 {
            return bad(format!(
                "need input channels, at least 2 classes and a batch (got {}, {}, {})",
                self.in_channels, self.num_classes, self.batch
            ));
        }
        if self.coupling_depth == 0 {
            return bad("coupling depth must be at least 1".into());
        }
        if self.vae && self.latent_dim == 0 {
            return bad("latent dimension must be at least 1".into());
        }
        let factor = 1usize << self.levels;
        if self.patch.iter().any(|&e| e == 0 || e % factor != 0) {
            return bad(format!("patch {:?} is not divisible by 2^{} = {factor}", self.patch, self.levels));
        }
        Ok(())
    }

    /// `[batch, in_channels, D, H, W]`.
    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = alloc::vec![self.batch, self.in_channels];
        s.extend_from_slice(&self.patch);
        s
    }

    /// Channel count of every encoder level.
    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..self.levels)
            .map(|l| match self.arch {
                Arch::Baseline | Arch::PartiallyInvRes => self.base_width << l,
                // half of each level moves down through an 8× unshuffle
                Arch::FullyInvRes => self.base_width * 4usize.pow(l as u32),
            })
            .collect()
    }
}
