//! Deterministic synthetic domains of graded difficulty.
//!
//! * `easy`: 2 classes, one colour channel dominates the whole image.
//!   Channel means alone separate the classes.
//! * `medium`: 10 classes, a single bar whose orientation encodes the class,
//!   random colour, noisy background.
//! * `hard`: 20 classes, a group of 2..=6 squares laid out in a row, column,
//!   diagonal or anti-diagonal; class = (count, arrangement). The total
//!   square area is roughly constant across classes.
//!
//! Labels are `i mod classes` shuffled with the split's generator, so every
//! split is class-balanced within one image. Each image draws from its own
//! [`substream`], so images can be regenerated independently.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::container::{DatasetContainer, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthKind {
    Easy,
    Medium,
    Hard,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Easy, SynthKind::Medium, SynthKind::Hard];

    pub fn num_classes(self) -> usize {
        match self {
            SynthKind::Easy => 2,
            SynthKind::Medium => 10,
            SynthKind::Hard => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Easy => "easy",
            SynthKind::Medium => "medium",
            SynthKind::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SynthKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

const CHANNELS: usize = 3;

struct Canvas {
    size: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self { size, px: vec![0; size * size * CHANNELS] }
    }

    fn set(&mut self, y: usize, x: usize, color: [u8; 3]) {
        let i = (y * self.size + x) * CHANNELS;
        self.px[i..i + CHANNELS].copy_from_slice(&color);
    }

    fn noise(&mut self, rng: &mut SplitMix64, lo: [u64; 3], span: [u64; 3]) {
        for p in self.px.chunks_mut(CHANNELS) {
            for c in 0..CHANNELS {
                p[c] = (lo[c] + rng.below(span[c])).min(255) as u8;
            }
        }
    }

    fn rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, color: [u8; 3]) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                self.set(y, x, color);
            }
        }
    }
}

fn scaled(v: usize, size: usize) -> usize {
    ((v * size + 16) / 32).max(1)
}

fn color(rng: &mut SplitMix64, lo: u64) -> [u8; 3] {
    let span = 256 - lo;
    [(lo + rng.below(span)) as u8, (lo + rng.below(span)) as u8, (lo + rng.below(span)) as u8]
}

fn render_easy(label: usize, size: usize, rng: &mut SplitMix64) -> Vec<u8> {
    let mut lo = [0u64; 3];
    for (c, l) in lo.iter_mut().enumerate() {
        *l = if c == label { 140 + rng.below(60) } else { 40 + rng.below(60) };
    }
    let mut cv = Canvas::new(size);
    cv.noise(rng, lo, [41; 3]);
    // a small distractor patch of arbitrary colour
    let (h, w) = (scaled(4, size) + rng.below(scaled(6, size) as u64) as usize, scaled(4, size) + rng.below(scaled(6, size) as u64) as usize);
    let y0 = rng.below((size - h + 1) as u64) as usize;
    let x0 = rng.below((size - w + 1) as u64) as usize;
    let c = color(rng, 0);
    cv.rect(y0, x0, h, w, c);
    cv.px
}

fn render_medium(label: usize, size: usize, rng: &mut SplitMix64) -> Vec<u8> {
    let mut cv = Canvas::new(size);
    cv.noise(rng, [0; 3], [60; 3]);
    let theta = core::f64::consts::PI * label as f64 / 10.0;
    let (dirx, diry) = (libm::cos(theta), libm::sin(theta));
    let jitter = scaled(4, size) as i64;
    let cx = (size as i64 / 2 + rng.below(2 * jitter as u64 + 1) as i64 - jitter) as f64;
    let cy = (size as i64 / 2 + rng.below(2 * jitter as u64 + 1) as i64 - jitter) as f64;
    let half_len = 0.35 * size as f64;
    let half_thick = 1.25 * size as f64 / 32.0;
    let c = color(rng, 150);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let along = dx * dirx + dy * diry;
            let across = -dx * diry + dy * dirx;
            if along.abs() <= half_len && across.abs() <= half_thick {
                cv.set(y, x, c);
            }
        }
    }
    cv.px
}

/// Square side per count (2..=6) at 32 px: keeps count·side² near 50.
const HARD_SIDES: [usize; 5] = [5, 4, 4, 3, 3];

fn render_hard(label: usize, size: usize, rng: &mut SplitMix64) -> Vec<u8> {
    let count = 2 + label / 4;
    let arrangement = label % 4;
    let side = scaled(HARD_SIDES[count - 2], size);
    let step = side + scaled(2, size);
    let span = (count - 1) * step + side;
    let mut cv = Canvas::new(size);
    cv.noise(rng, [0; 3], [70; 3]);
    let c = color(rng, 120);
    let (span_y, span_x) = match arrangement {
        0 => (side, span),
        1 => (span, side),
        _ => (span, span),
    };
    let oy = rng.below((size - span_y + 1) as u64) as usize;
    let ox = rng.below((size - span_x + 1) as u64) as usize;
    for i in 0..count {
        let (dy, dx) = match arrangement {
            0 => (0, i * step),
            1 => (i * step, 0),
            2 => (i * step, i * step),
            _ => (i * step, (count - 1 - i) * step),
        };
        cv.rect(oy + dy, ox + dx, side, side, c);
    }
    cv.px
}

/// Smallest image side the generators support.
pub const MIN_SYNTH_SIZE: usize = 32;

/// Generates train/val/test splits of `sizes[i]` images each.
pub fn generate_synthetic(kind: SynthKind, sizes: [usize; 3], seed: u64, image_size: usize) -> Result<[DatasetContainer; 3]> {
    let classes = kind.num_classes();
    if let Some(&n) = sizes.iter().find(|&&n| n < classes) {
        return Err(Error::Config(format!("{} domain needs at least {classes} images per split, got {n}", kind.name())));
    }
    if image_size < MIN_SYNTH_SIZE {
        return Err(Error::Config(format!("image size {image_size} below {MIN_SYNTH_SIZE}")));
    }
    let make = |split: Split, n: usize| -> Result<DatasetContainer> {
        let split_seed = derive_seed(seed, &format!("{}/{}", kind.name(), split.name()));
        let mut labels: Vec<u16> = (0..n).map(|i| (i % classes) as u16).collect();
        SplitMix64::new(split_seed).shuffle(&mut labels);
        let mut pixels = Vec::with_capacity(n * image_size * image_size * CHANNELS);
        for (i, &label) in labels.iter().enumerate() {
            let mut rng = substream(split_seed, i as u64);
            let img = match kind {
                SynthKind::Easy => render_easy(label as usize, image_size, &mut rng),
                SynthKind::Medium => render_medium(label as usize, image_size, &mut rng),
                SynthKind::Hard => render_hard(label as usize, image_size, &mut rng),
            };
            pixels.extend_from_slice(&img);
        }
        let provenance = format!("synthetic:{}:seed={seed}", kind.name());
        DatasetContainer::new(image_size, image_size, CHANNELS, classes as u16, split, provenance, labels, pixels)
    };
    Ok([make(Split::Train, sizes[0])?, make(Split::Val, sizes[1])?, make(Split::Test, sizes[2])?])
}
