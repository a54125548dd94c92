use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How visual tokens reach the language model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Projected visual tokens are spliced between two text segments.
    Baseline,
    /// Text embeddings are additionally concatenated with the mean-pooled
    /// projected visual vector and re-projected before splicing.
    VisAlign,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Baseline => "baseline",
            FusionMode::VisAlign => "visalign",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            FusionMode::Baseline => 0,
            FusionMode::VisAlign => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(FusionMode::Baseline),
            1 => Ok(FusionMode::VisAlign),
            _ => Err(Error::Config(format!("unknown fusion code {c}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(FusionMode::Baseline),
            "visalign" => Ok(FusionMode::VisAlign),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

/// Initialization of the fusion projection `W_d` (`2d_t × d_t`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FuseInit {
    /// Top block identity, bottom block Gaussian with this std (0 gives an
    /// exact baseline-equivalent start).
    IdentityTop { bottom_std: f64 },
    /// Every entry Gaussian with this std.
    Gaussian { std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_t: usize,
    pub d_v: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub n_visual: usize,
    pub ff_mult: usize,
    pub fusion: FusionMode,
    pub init_std: f64,
    pub fuse_init: FuseInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_t: 64,
            d_v: 32,
            layers: 4,
            heads: 4,
            vocab: 64,
            max_seq: 64,
            n_visual: 16,
            ff_mult: 4,
            fusion: FusionMode::Baseline,
            init_std: 0.02,
            fuse_init: FuseInit::IdentityTop { bottom_std: 0.02 },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_t", self.d_t),
            ("d_v", self.d_v),
            ("layers", self.layers),
            ("heads", self.heads),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
            ("n_visual", self.n_visual),
            ("ff_mult", self.ff_mult),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_t.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_t = {} is not divisible by heads = {}",
                self.d_t, self.heads
            )));
        }
        if self.n_visual >= self.max_seq {
            return Err(Error::Config("n_visual must leave room for text in max_seq".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_t / self.heads
    }

    pub fn ff_width(&self) -> usize {
        self.d_t * self.ff_mult
    }
}
