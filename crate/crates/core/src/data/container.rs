use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|sp| sp.name() == s)
    }
}

/// Labelled images stored as `u8`, layout `count × H × W × C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetContainer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: u16,
    pub split: Split,
    pub provenance: String,
    pub labels: Vec<u16>,
    pub pixels: Vec<u8>,
}

impl DatasetContainer {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        num_classes: u16,
        split: Split,
        provenance: String,
        labels: Vec<u16>,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let c = Self { height, width, channels, num_classes, split, provenance, labels, pixels };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Config("dataset must contain at least one image".into()));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.pixels.len() != self.labels.len() * self.image_len() {
            return Err(Error::Config(format!("{} pixel bytes for {} images of {} bytes", self.pixels.len(), self.len(), self.image_len())));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange { label: l as usize, classes: self.num_classes as usize });
        }
        Ok(())
    }

    /// Images per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Whether `other` can be another split of the same domain.
    pub fn compatible(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels && self.num_classes == other.num_classes
    }
}
