use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    L1,
    L2,
    L3,
    Toy,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::L1, Preset::L2, Preset::L3, Preset::Toy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::L1 => "L1",
            Preset::L2 => "L2",
            Preset::L3 => "L3",
            Preset::Toy => "toy",
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            Preset::L1 => ModelConfig::imagenet(24, 192),
            Preset::L2 => ModelConfig::imagenet(24, 384),
            Preset::L3 => ModelConfig::imagenet(36, 448),
            Preset::Toy => ModelConfig {
                depth: 2,
                d_model: 32,
                expand: 2,
                state_size: 4,
                dt_rank: 2,
                patch: 8,
                conv_k: 7,
                img_size: 32,
                num_classes: 2,
                eps: 1e-6,
                average_paths: false,
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Preset::L1),
            "l2" => Ok(Preset::L2),
            "l3" => Ok(Preset::L3),
            "toy" => Ok(Preset::Toy),
            _ => Err(Error::Config(format!("unknown config '{s}' (expected L1, L2, L3 or toy)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub depth: usize,
    pub d_model: usize,
    /// `d_inner = expand · d_model`.
    pub expand: usize,
    /// SSM state size per channel.
    pub state_size: usize,
    pub dt_rank: usize,
    /// Tokenizer downsampling factor (kernel = stride).
    pub patch: usize,
    /// Depthwise kernel extent inside each block.
    pub conv_k: usize,
    /// Training resolution; fixes the positional-embedding grid.
    pub img_size: usize,
    pub num_classes: usize,
    pub eps: f64,
    /// Average the four path outputs instead of summing them.
    pub average_paths: bool,
}

impl ModelConfig {
    /// ImageNet-style configuration at the given depth and width.
    pub fn imagenet(depth: usize, d_model: usize) -> Self {
        Self {
            depth,
            d_model,
            expand: 2,
            state_size: 16,
            dt_rank: d_model.div_ceil(16),
            patch: 16,
            conv_k: 7,
            img_size: 224,
            num_classes: 1000,
            eps: 1e-6,
            average_paths: false,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Side of the positional-embedding grid.
    pub fn train_grid(&self) -> usize {
        self.img_size / self.patch
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("d_model", self.d_model),
            ("expand", self.expand),
            ("state_size", self.state_size),
            ("dt_rank", self.dt_rank),
            ("patch", self.patch),
            ("img_size", self.img_size),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_k % 2 == 0 {
            return Err(Error::Config(format!("conv_k must be odd, got {}", self.conv_k)));
        }
        if self.img_size % self.patch != 0 {
            return Err(Error::Config(format!(
                "img_size {} is not a multiple of patch {}",
                self.img_size, self.patch
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }

    /// Token grid for an input resolution; both sides must divide by `patch`.
    pub fn token_grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height == 0 || width == 0 || height % self.patch != 0 || width % self.patch != 0 {
            return Err(Error::Config(format!(
                "input {height}x{width} must be a non-zero multiple of the patch size {}",
                self.patch
            )));
        }
        Ok((height / self.patch, width / self.patch))
    }
}
