//! Split sizes and class counts of the ten Visual Decathlon domains.

use alloc::string::String;
use alloc::vec::Vec;

use super::synth::SynthKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSpec {
    pub name: String,
    pub num_classes: usize,
    /// train, val, test
    pub split_sizes: [usize; 3],
    pub difficulty: Option<SynthKind>,
}

impl DomainSpec {
    pub fn synthetic(kind: SynthKind, split_sizes: [usize; 3]) -> Self {
        Self { name: kind.name().into(), num_classes: kind.num_classes(), split_sizes, difficulty: Some(kind) }
    }
}

const DECATHLON: [(&str, usize, [usize; 3]); 10] = [
    ("Airc", 100, [3334, 3333, 3333]),
    ("C100", 100, [40000, 10000, 10000]),
    ("DPed", 2, [23520, 5880, 19600]),
    ("DTD", 47, [1880, 1880, 1880]),
    ("GTSRB", 43, [31367, 7842, 12630]),
    ("ImNet", 1000, [1232167, 49000, 48238]),
    ("OGlt", 1623, [19476, 6492, 6492]),
    ("SVHN", 10, [47217, 26040, 26032]),
    ("UCF", 101, [7629, 1908, 3783]),
    ("Flwr", 102, [1020, 1020, 6149]),
];

/// Metadata only; no images ship with the crate.
pub fn decathlon_fixture() -> Vec<DomainSpec> {
    DECATHLON
        .iter()
        .map(|&(name, num_classes, split_sizes)| DomainSpec { name: name.into(), num_classes, split_sizes, difficulty: None })
        .collect()
}
