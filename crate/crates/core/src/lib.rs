//! Adaptive incremental multi-domain learning.
//!
//! A shared convolutional base network is trained once, partitioned into
//! `K` blocks and frozen. Each new domain receives its own parallel 1x1
//! adapters, batch-norm parameters and early-exit heads. All exits are
//! trained together with a summed cross-entropy loss, and a threshold rule
//! picks the cheapest exit whose accuracy stays within `T` points of the
//! full adapted network.
//!
//! The crate is `no_std` (with `alloc`). File formats, reports and the
//! command-line harness live in the companion `amdl` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod model;
pub mod policy;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
