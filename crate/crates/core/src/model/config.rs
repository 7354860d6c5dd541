use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Shape of the block-partitioned residual base network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub in_channels: usize,
    /// Number of blocks `K`; also the number of exits.
    pub num_blocks: usize,
    pub units_per_block: usize,
    /// Output channels of each block; the stem emits `block_channels[0]`.
    pub block_channels: Vec<usize>,
    /// Side `c` of the base convolution kernels (odd).
    pub kernel_size: usize,
}

impl NetworkConfig {
    /// 26-layer residual network: three blocks of four units,
    /// 64/128/256 channels, 3x3 kernels, 72x72x3 inputs.
    pub fn resnet26() -> Self {
        Self {
            input_height: 72,
            input_width: 72,
            in_channels: 3,
            num_blocks: 3,
            units_per_block: 4,
            block_channels: vec![64, 128, 256],
            kernel_size: 3,
        }
    }

    /// Desk-scale analogue: one unit per block, 8/16/32 channels, 32x32x3.
    pub fn tiny() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            in_channels: 3,
            num_blocks: 3,
            units_per_block: 1,
            block_channels: vec![8, 16, 32],
            kernel_size: 3,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "resnet26" => Some(Self::resnet26()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_blocks == 0 {
            return bad("at least one block is required".into());
        }
        if self.block_channels.len() != self.num_blocks {
            return bad(format!("{} block channel counts for {} blocks", self.block_channels.len(), self.num_blocks));
        }
        if self.units_per_block == 0 {
            return bad("units_per_block must be >= 1".into());
        }
        if self.block_channels.contains(&0) || self.in_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size {} is not odd", self.kernel_size));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return bad("input size must be positive".into());
        }
        Ok(())
    }

    /// Stride of the first unit of block `k` (0-based): blocks after the
    /// first halve the resolution.
    pub fn block_stride(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            2
        }
    }

    /// Spatial size `(h, w)` of block `k`'s output (0-based).
    pub fn block_resolution(&self, k: usize) -> (usize, usize) {
        let (mut h, mut w) = (self.input_height, self.input_width);
        for j in 1..=k {
            let s = self.block_stride(j);
            h = (h - 1) / s + 1;
            w = (w - 1) / s + 1;
        }
        (h, w)
    }

    /// Canonical one-line description, the input to [`NetworkConfig::hash`].
    pub fn canonical(&self) -> String {
        let chans: Vec<String> = self.block_channels.iter().map(|c| format!("{c}")).collect();
        format!(
            "input={}x{}x{};blocks={};units={};channels={};kernel={}",
            self.input_height,
            self.input_width,
            self.in_channels,
            self.num_blocks,
            self.units_per_block,
            chans.join(","),
            self.kernel_size
        )
    }

    /// Parses the output of [`NetworkConfig::canonical`].
    pub fn parse_canonical(s: &str) -> Result<Self> {
        let err = || Error::Config(format!("malformed network description '{s}'"));
        let mut cfg = Self::tiny();
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(err)?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| err());
            match k {
                "input" => {
                    let dims: Vec<&str> = v.split('x').collect();
                    if dims.len() != 3 {
                        return Err(err());
                    }
                    cfg.input_height = num(dims[0])?;
                    cfg.input_width = num(dims[1])?;
                    cfg.in_channels = num(dims[2])?;
                }
                "blocks" => cfg.num_blocks = num(v)?,
                "units" => cfg.units_per_block = num(v)?,
                "channels" => cfg.block_channels = v.split(',').map(num).collect::<Result<_>>()?,
                "kernel" => cfg.kernel_size = num(v)?,
                _ => return Err(err()),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a over the canonical description. Adapter bundles record it so
    /// they are only ever loaded against the base they were trained with.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
