use alloc::format;
use alloc::vec::Vec;

use super::config::NetworkConfig;
use super::domain::{DomainParams, ExitTopology};
use super::params::{ConvIds, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::Real;

/// The two `c×c` convolutions of a residual unit and its optional 1x1
/// projection shortcut (present when channels or stride change).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitConvs {
    pub conv1: ConvIds,
    pub conv2: ConvIds,
    pub projection: Option<ConvIds>,
}

/// Shared, domain-agnostic convolution weights: the stem plus `K` blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedWeights {
    pub stem: ConvIds,
    /// `units[k][u]`: unit `u` of block `k` (0-based).
    pub units: Vec<Vec<UnitConvs>>,
}

impl SharedWeights {
    pub fn stem_ids(&self) -> Vec<ParamId> {
        self.stem.ids().to_vec()
    }

    /// Conv weights and biases of one unit, projection included.
    pub fn unit_ids(&self, block: usize, unit: usize) -> Vec<ParamId> {
        let u = &self.units[block][unit];
        let mut ids = Vec::from(u.conv1.ids());
        ids.extend(u.conv2.ids());
        if let Some(p) = &u.projection {
            ids.extend(p.ids());
        }
        ids
    }

    pub fn block_ids(&self, block: usize) -> Vec<ParamId> {
        (0..self.units[block].len()).flat_map(|u| self.unit_ids(block, u)).collect()
    }
}

/// Input channels, output channels and stride of unit `u` in block `k`.
pub(crate) fn unit_geometry(config: &NetworkConfig, k: usize, u: usize) -> (usize, usize, usize) {
    let cout = config.block_channels[k];
    if u > 0 {
        return (cout, cout, 1);
    }
    let cin = if k == 0 { config.block_channels[0] } else { config.block_channels[k - 1] };
    (cin, cout, config.block_stride(k))
}

/// The base network: shared weights plus the normalization layers and
/// classifier of the domain it was trained on (its "home" domain).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNetwork<T> {
    pub config: NetworkConfig,
    pub num_classes: usize,
    pub shared_store: ParamStore<T>,
    pub shared: SharedWeights,
    pub home_store: ParamStore<T>,
    pub home: DomainParams,
    frozen_checksum: Option<u32>,
}

impl<T: Real> BaseNetwork<T> {
    /// He-initialized base network, deterministic in `seed`.
    pub fn build(config: &NetworkConfig, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 {
            return Err(crate::Error::Config("num_classes must be >= 1".into()));
        }
        let c = config.kernel_size;
        let mut shared_store = ParamStore::new();
        let stem = ConvIds::init(&mut shared_store, seed, "stem.conv", config.in_channels, config.block_channels[0], c, 1, 1.0);
        let mut units = Vec::with_capacity(config.num_blocks);
        for k in 0..config.num_blocks {
            let mut block = Vec::with_capacity(config.units_per_block);
            for u in 0..config.units_per_block {
                let (cin, cout, stride) = unit_geometry(config, k, u);
                let p = format!("block{}.unit{}", k + 1, u + 1);
                let conv1 = ConvIds::init(&mut shared_store, seed, &format!("{p}.conv1"), cin, cout, c, stride, 1.0);
                let conv2 = ConvIds::init(&mut shared_store, seed, &format!("{p}.conv2"), cout, cout, c, 1, 1.0);
                let projection = (cin != cout || stride != 1)
                    .then(|| ConvIds::init(&mut shared_store, seed, &format!("{p}.projection"), cin, cout, 1, stride, 1.0));
                block.push(UnitConvs { conv1, conv2, projection });
            }
            units.push(block);
        }
        let mut home_store = ParamStore::new();
        let home = DomainParams::build(&mut home_store, seed, config, num_classes, &ExitTopology::Basic, false, false);
        Ok(Self { config: config.clone(), num_classes, shared_store, shared: SharedWeights { stem, units }, home_store, home, frozen_checksum: None })
    }

    /// CRC32 over every base tensor, shared and home.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        self.shared_store.checksum(&mut h);
        self.home_store.checksum(&mut h);
        h.finalize()
    }

    /// Clears `requires_grad` on all base tensors and records the checksum.
    pub fn freeze(&mut self) {
        self.shared_store.freeze_all();
        self.home_store.freeze_all();
        self.frozen_checksum = Some(self.checksum());
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_checksum.is_some()
    }

    pub fn frozen_checksum(&self) -> Option<u32> {
        self.frozen_checksum
    }

    /// True when frozen and no byte has changed since.
    pub fn verify_frozen(&self) -> bool {
        self.frozen_checksum == Some(self.checksum())
    }

    pub fn config_hash(&self) -> u64 {
        self.config.hash()
    }
}

/// Free-function form of [`BaseNetwork::build`].
pub fn build_base<T: Real>(config: &NetworkConfig, num_classes: usize, seed: u64) -> Result<BaseNetwork<T>> {
    BaseNetwork::build(config, num_classes, seed)
}

/// Free-function form of [`BaseNetwork::freeze`].
pub fn freeze_base<T: Real>(base: &mut BaseNetwork<T>) {
    base.freeze();
}
