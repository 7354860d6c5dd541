//! Block-partitioned residual base network, per-domain adapters and exit
//! heads, parameter accounting.

mod base;
mod config;
mod domain;
mod forward;
mod ledger;
mod params;

pub use base::{build_base, freeze_base, BaseNetwork, SharedWeights, UnitConvs};
pub use config::NetworkConfig;
pub use domain::{attach_domain, DomainAdapterSet, DomainParams, ExitHead, ExitTopology, HeadBody, UnitNorms, ADAPTER_INIT_GAIN};
pub use forward::{adapted_conv, adapted_sum, forward_multi_exit, forward_to_depth, Bindings, Forward, Mode, Owner, BN_EPS, BN_MOMENTUM};
pub use ledger::{count_params, ParamLedger};
pub use params::{BnIds, ConvIds, LinearIds, ParamId, ParamKind, ParamStore};
