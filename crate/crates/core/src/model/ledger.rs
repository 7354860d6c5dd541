use alloc::vec::Vec;

use super::base::BaseNetwork;
use super::domain::{unit_domain_ids, DomainAdapterSet};
use super::params::ParamId;
use crate::tensor::Real;

/// Parameter counts by scope, summed from the live tensors.
///
/// Running statistics are buffers, not parameters, and are never counted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLedger {
    /// Stem convolution (shared).
    pub base_stem: usize,
    /// Shared convolution parameters of each unit, projection included.
    pub base_units: Vec<Vec<usize>>,
    pub base_blocks: Vec<usize>,
    /// Stem plus all blocks.
    pub base_total: usize,
    /// The base network's own BN layers and classifier.
    pub home_specific: usize,
    /// Per-unit domain bundle: parallel 1x1 filters (weights + biases) and
    /// the unit's BN scale/shift.
    pub adapter_units: Vec<Vec<usize>>,
    pub adapter_blocks: Vec<usize>,
    /// 1x1 filter banks alone, all blocks.
    pub adapter_filters: usize,
    pub domain_stem_bn: usize,
    /// Head parameters per exit (BN, body, classifier).
    pub exit_heads: Vec<usize>,
    /// `cumulative[k-1]`: stem + blocks `1..=k` of the base + adapter
    /// bundles of those blocks. Cost of answering from exit `k`.
    pub cumulative: Vec<usize>,
}

impl ParamLedger {
    pub fn num_exits(&self) -> usize {
        self.cumulative.len()
    }

    pub fn adapter_total(&self) -> usize {
        self.adapter_blocks.iter().sum()
    }

    /// Base plus all adapter bundles: the fully adapted network.
    pub fn full_total(&self) -> usize {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// `cumulative(exit) / full_total`.
    pub fn fraction_at(&self, exit: usize) -> f64 {
        self.cumulative[exit - 1] as f64 / self.full_total() as f64
    }

    /// Shared-over-domain parameter ratio of one unit (0-based indices).
    pub fn unit_ratio(&self, block: usize, unit: usize) -> f64 {
        self.base_units[block][unit] as f64 / self.adapter_units[block][unit] as f64
    }

    /// Head parameters of exits `1..=exit`.
    pub fn heads_through(&self, exit: usize) -> usize {
        self.exit_heads.iter().take(exit).sum()
    }
}

/// Counts parameters of `base` and, if given, of one domain's adapter set.
pub fn count_params<T: Real>(base: &BaseNetwork<T>, adapters: Option<&DomainAdapterSet<T>>) -> ParamLedger {
    let shared = &base.shared_store;
    let cnt = |ids: &[ParamId]| shared.count(ids);
    let k = base.config.num_blocks;

    let mut l = ParamLedger { base_stem: cnt(&base.shared.stem_ids()), ..Default::default() };
    for b in 0..k {
        let units: Vec<usize> = (0..base.shared.units[b].len()).map(|u| cnt(&base.shared.unit_ids(b, u))).collect();
        l.base_blocks.push(units.iter().sum());
        l.base_units.push(units);
    }
    l.base_total = l.base_stem + l.base_blocks.iter().sum::<usize>();
    l.home_specific = base.home_store.trainable().map(|id| base.home_store.get(id).numel()).sum();

    match adapters {
        Some(d) => {
            for block in &d.params.units {
                let units: Vec<usize> = block.iter().map(|u| d.store.count(&unit_domain_ids(u))).collect();
                l.adapter_blocks.push(units.iter().sum());
                l.adapter_units.push(units);
            }
            l.adapter_filters = d.store.count(&d.adapter_ids());
            l.domain_stem_bn = d.store.count(&d.params.stem_bn.learnable());
            l.exit_heads = (1..=k).map(|e| d.store.count(&d.params.head_ids(e))).collect();
        }
        None => {
            l.adapter_units = base.shared.units.iter().map(|b| alloc::vec![0; b.len()]).collect();
            l.adapter_blocks = alloc::vec![0; k];
            l.exit_heads = alloc::vec![0; k];
        }
    }

    let mut running = l.base_stem;
    for b in 0..k {
        running += l.base_blocks[b] + l.adapter_blocks[b];
        l.cumulative.push(running);
    }
    l
}
