//! Datasets: the in-memory container, synthetic generators, preprocessing
//! and the Visual Decathlon metadata.

mod container;
mod decathlon;
mod preprocess;
mod synth;

pub use container::{DatasetContainer, Split};
pub use decathlon::{decathlon_fixture, DomainSpec};
pub use preprocess::{preprocess, resize_bilinear, Normalization, Prepared, MIN_TARGET, STD_EPS};
pub use synth::{generate_synthetic, SynthKind, MIN_SYNTH_SIZE};
