use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::base::{unit_geometry, BaseNetwork};
use super::config::NetworkConfig;
use super::params::{BnIds, ConvIds, LinearIds, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Adapter weights start at one tenth of He scale.
pub const ADAPTER_INIT_GAIN: f64 = 0.1;

/// Topology of the early exit heads (the last exit is always `Basic`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitTopology {
    /// Pool and a linear classifier.
    Basic,
    /// Pool, one dense+relu layer per listed width, then the classifier.
    Mlp(Vec<usize>),
    /// 1x1 convolution (same channel count) + relu, pool, classifier.
    Conv1x1,
}

impl ExitTopology {
    /// `basic`, `mlp:128`, `mlp:128,128`, `conv1x1`.
    pub fn tag(&self) -> String {
        match self {
            ExitTopology::Basic => "basic".into(),
            ExitTopology::Conv1x1 => "conv1x1".into(),
            ExitTopology::Mlp(w) => {
                let ws: Vec<String> = w.iter().map(|x| format!("{x}")).collect();
                format!("mlp:{}", ws.join(","))
            }
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "basic" => Ok(ExitTopology::Basic),
            "conv1x1" => Ok(ExitTopology::Conv1x1),
            _ => {
                let widths = tag.strip_prefix("mlp:").ok_or_else(|| Error::Config(format!("unknown exit topology '{tag}'")))?;
                let widths: Vec<usize> = widths
                    .split(',')
                    .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::Config(format!("bad mlp widths in '{tag}'")))?;
                if widths.is_empty() {
                    return Err(Error::Config("mlp exit needs at least one width".into()));
                }
                Ok(ExitTopology::Mlp(widths))
            }
        }
    }
}

/// Domain-specific parameters of one residual unit: the batch norms after
/// each convolution and, when adapted, the parallel 1x1 filter banks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitNorms {
    pub bn1: BnIds,
    pub bn2: BnIds,
    pub adapter1: Option<ConvIds>,
    pub adapter2: Option<ConvIds>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadBody {
    Basic,
    Mlp(Vec<LinearIds>),
    Conv1x1(ConvIds),
}

/// Exit head: BN, relu, body, global pool, classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitHead {
    pub bn: BnIds,
    pub body: HeadBody,
    pub classifier: LinearIds,
}

impl ExitHead {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::from(self.bn.learnable());
        match &self.body {
            HeadBody::Basic => {}
            HeadBody::Mlp(layers) => layers.iter().for_each(|l| ids.extend(l.ids())),
            HeadBody::Conv1x1(c) => ids.extend(c.ids()),
        }
        ids.extend(self.classifier.ids());
        ids
    }
}

/// Index structure over a domain's parameter store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainParams {
    pub stem_bn: BnIds,
    /// `units[k][u]`, 0-based block and unit.
    pub units: Vec<Vec<UnitNorms>>,
    /// `heads[e]` for exit `e + 1`; `None` where the domain has no head.
    pub heads: Vec<Option<ExitHead>>,
}

impl DomainParams {
    /// Creates fresh BN layers everywhere (γ=1, β=0, stats 0/1), adapters if
    /// `adapt`, and heads at every exit (`all_exits`) or only the last.
    pub(crate) fn build<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        config: &NetworkConfig,
        num_classes: usize,
        topology: &ExitTopology,
        adapt: bool,
        all_exits: bool,
    ) -> Self {
        let stem_bn = BnIds::init(store, "stem.bn", config.block_channels[0]);
        let mut units = Vec::with_capacity(config.num_blocks);
        for k in 0..config.num_blocks {
            let mut block = Vec::with_capacity(config.units_per_block);
            for u in 0..config.units_per_block {
                let (cin, cout, stride) = unit_geometry(config, k, u);
                let p = format!("block{}.unit{}", k + 1, u + 1);
                let adapter1 =
                    adapt.then(|| ConvIds::init(store, seed, &format!("{p}.adapter1"), cin, cout, 1, stride, ADAPTER_INIT_GAIN));
                let bn1 = BnIds::init(store, &format!("{p}.bn1"), cout);
                let adapter2 =
                    adapt.then(|| ConvIds::init(store, seed, &format!("{p}.adapter2"), cout, cout, 1, 1, ADAPTER_INIT_GAIN));
                let bn2 = BnIds::init(store, &format!("{p}.bn2"), cout);
                block.push(UnitNorms { bn1, bn2, adapter1, adapter2 });
            }
            units.push(block);
        }
        let last = config.num_blocks - 1;
        let heads = (0..config.num_blocks)
            .map(|k| {
                if k != last && !all_exits {
                    return None;
                }
                let topo = if k == last { &ExitTopology::Basic } else { topology };
                Some(build_head(store, seed, k + 1, config.block_channels[k], num_classes, topo))
            })
            .collect();
        Self { stem_bn, units, heads }
    }

    /// Learnable ids trained together with block `block` (1-based): the
    /// unit batch norms and adapters of that block, plus the stem BN for
    /// block 1.
    pub fn block_ids(&self, block: usize) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if block == 1 {
            ids.extend(self.stem_bn.learnable());
        }
        for u in &self.units[block - 1] {
            ids.extend(unit_domain_ids(u));
        }
        ids
    }

    /// Learnable ids of the head at exit `exit` (1-based), if any.
    pub fn head_ids(&self, exit: usize) -> Vec<ParamId> {
        self.heads[exit - 1].as_ref().map(ExitHead::ids).unwrap_or_default()
    }

    pub fn num_exits(&self) -> usize {
        self.heads.len()
    }
}

/// Adapter and BN learnables of one unit.
pub(crate) fn unit_domain_ids(u: &UnitNorms) -> Vec<ParamId> {
    let mut ids = Vec::new();
    if let Some(a) = &u.adapter1 {
        ids.extend(a.ids());
    }
    ids.extend(u.bn1.learnable());
    if let Some(a) = &u.adapter2 {
        ids.extend(a.ids());
    }
    ids.extend(u.bn2.learnable());
    ids
}

fn build_head<T: Real>(store: &mut ParamStore<T>, seed: u64, exit: usize, channels: usize, classes: usize, topo: &ExitTopology) -> ExitHead {
    let p = format!("exit{exit}");
    let bn = BnIds::init(store, &format!("{p}.bn"), channels);
    let (body, features) = match topo {
        ExitTopology::Basic => (HeadBody::Basic, channels),
        ExitTopology::Conv1x1 => {
            (HeadBody::Conv1x1(ConvIds::init(store, seed, &format!("{p}.conv"), channels, channels, 1, 1, 1.0)), channels)
        }
        ExitTopology::Mlp(widths) => {
            let mut fan_in = channels;
            let mut layers = Vec::with_capacity(widths.len());
            for (i, &w) in widths.iter().enumerate() {
                layers.push(LinearIds::init(store, seed, &format!("{p}.mlp{}", i + 1), fan_in, w, libm::sqrt(2.0)));
                fan_in = w;
            }
            (HeadBody::Mlp(layers), fan_in)
        }
    };
    let classifier = LinearIds::init(store, seed, &format!("{p}.classifier"), features, classes, 1.0);
    ExitHead { bn, body, classifier }
}

/// Per-domain parameters attached to a frozen base network.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainAdapterSet<T> {
    pub domain: String,
    pub num_classes: usize,
    pub topology: ExitTopology,
    /// Whether parallel adapters are present (false: BN and heads only).
    pub adapt: bool,
    /// Hash of the base network configuration this set belongs to.
    pub base_hash: u64,
    /// Blocks used at inference (`K_n`); exits beyond it are not evaluated.
    pub active_blocks: usize,
    pub store: ParamStore<T>,
    pub params: DomainParams,
}

impl<T: Real> DomainAdapterSet<T> {
    /// Attaches a new domain to a frozen base: fresh BN everywhere, adapters
    /// parallel to both convolutions of every unit (if `adapt`), and exit
    /// heads after every block.
    pub fn attach(
        base: &BaseNetwork<T>,
        domain: &str,
        num_classes: usize,
        topology: ExitTopology,
        adapt: bool,
        seed: u64,
    ) -> Result<Self> {
        if !base.is_frozen() {
            return Err(Error::BaseNotFrozen);
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if let ExitTopology::Mlp(w) = &topology {
            if w.is_empty() {
                return Err(Error::Config("mlp exit needs at least one width".into()));
            }
        }
        let mut store = ParamStore::new();
        let params = DomainParams::build(&mut store, seed, &base.config, num_classes, &topology, adapt, true);
        Ok(Self {
            domain: domain.into(),
            num_classes,
            topology,
            adapt,
            base_hash: base.config_hash(),
            active_blocks: base.config.num_blocks,
            store,
            params,
        })
    }

    pub fn num_exits(&self) -> usize {
        self.params.num_exits()
    }

    /// Ids of every adapter filter bank (weights and biases).
    pub fn adapter_ids(&self) -> Vec<ParamId> {
        self.params
            .units
            .iter()
            .flatten()
            .flat_map(|u| u.adapter1.iter().chain(u.adapter2.iter()).flat_map(|c| c.ids()))
            .collect()
    }

    /// Adapter filter bank ids of one block (1-based).
    pub fn block_adapter_ids(&self, block: usize) -> Vec<ParamId> {
        self.params.units[block - 1]
            .iter()
            .flat_map(|u| u.adapter1.iter().chain(u.adapter2.iter()).flat_map(|c| c.ids()))
            .collect()
    }

    /// Sets every adapter weight and bias to zero.
    pub fn zero_adapters(&mut self) {
        for id in self.adapter_ids() {
            self.store.get_mut(id).data_mut().fill(T::zero());
        }
    }

    /// Copies the base network's own normalization layers (stem, units and
    /// last-exit head) and, when class counts agree, its classifier.
    pub fn inherit_base_norms(&mut self, base: &BaseNetwork<T>) -> Result<()> {
        if self.base_hash != base.config_hash() {
            return Err(Error::ParamMismatch("adapter set belongs to a different base configuration".into()));
        }
        let mut pairs: Vec<(ParamId, ParamId)> = Vec::new();
        let bn = |a: &BnIds, b: &BnIds, out: &mut Vec<(ParamId, ParamId)>| out.extend(a.all().into_iter().zip(b.all()));
        bn(&self.params.stem_bn, &base.home.stem_bn, &mut pairs);
        for (mine, theirs) in self.params.units.iter().flatten().zip(base.home.units.iter().flatten()) {
            bn(&mine.bn1, &theirs.bn1, &mut pairs);
            bn(&mine.bn2, &theirs.bn2, &mut pairs);
        }
        let last = self.num_exits() - 1;
        let (Some(mine), Some(theirs)) = (&self.params.heads[last], &base.home.heads[last]) else {
            return Err(Error::ParamMismatch("missing last-exit head".into()));
        };
        bn(&mine.bn, &theirs.bn, &mut pairs);
        if self.num_classes == base.num_classes {
            pairs.extend(mine.classifier.ids().into_iter().zip(theirs.classifier.ids()));
        }
        for (dst, src) in pairs {
            let values = base.home_store.get(src).data().to_vec();
            self.store.get_mut(dst).data_mut().copy_from_slice(&values);
        }
        Ok(())
    }
}

/// Free-function form of [`DomainAdapterSet::attach`].
pub fn attach_domain<T: Real>(
    base: &BaseNetwork<T>,
    domain: &str,
    num_classes: usize,
    topology: ExitTopology,
    adapt: bool,
    seed: u64,
) -> Result<DomainAdapterSet<T>> {
    DomainAdapterSet::attach(base, domain, num_classes, topology, adapt, seed)
}
