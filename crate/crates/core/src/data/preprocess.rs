//! Resize, scale to [0, 1], standardize per channel, and batch.

use alloc::vec;
use alloc::vec::Vec;

use super::container::DatasetContainer;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Real, Tensor};

/// Guard added to the standard deviation so constant channels stay finite.
pub const STD_EPS: f64 = 1e-6;

/// Smallest accepted target side.
pub const MIN_TARGET: usize = 8;

/// Bilinear resize of one `h × w × c` image (half-pixel centres, edge clamp).
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, c: usize, th: usize, tw: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w * c);
    if (h, w) == (th, tw) {
        return src.to_vec();
    }
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(th, h);
    let xs = axis(tw, w);
    let mut out = vec![0.0; th * tw * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(oy * tw + ox) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Per-channel affine standardization `(x - mean) / (std + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0 - STD_EPS; channels] }
    }

    /// Statistics of the resized, [0, 1]-scaled training split.
    pub fn fit(train: &DatasetContainer, target: (usize, usize)) -> Result<Self> {
        check_target(target)?;
        let c = train.channels;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..train.len() {
            let img = scaled_resized(train, i, target);
            for px in img.chunks(c) {
                for ch in 0..c {
                    sum[ch] += px[ch];
                    sq[ch] += px[ch] * px[ch];
                }
            }
        }
        let n = (train.len() * target.0 * target.1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| libm::sqrt((q / n - m * m).max(0.0))).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, ch: usize, x: f64) -> f64 {
        (x - self.mean[ch]) / (self.std[ch] + STD_EPS)
    }
}

fn check_target(target: (usize, usize)) -> Result<()> {
    if target.0 < MIN_TARGET || target.1 < MIN_TARGET {
        return Err(Error::Config(alloc::format!("target {}x{} is below {MIN_TARGET}x{MIN_TARGET}", target.0, target.1)));
    }
    Ok(())
}

fn scaled_resized(data: &DatasetContainer, i: usize, target: (usize, usize)) -> Vec<f64> {
    let img: Vec<f64> = data.image(i).iter().map(|&p| p as f64 / 255.0).collect();
    resize_bilinear(&img, data.height, data.width, data.channels, target.0, target.1)
}

/// A split converted to network input layout (`N × C × H × W`).
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub images: Vec<T>,
    pub labels: Vec<usize>,
}

pub fn preprocess<T: Real>(data: &DatasetContainer, target: (usize, usize), norm: &Normalization) -> Result<Prepared<T>> {
    check_target(target)?;
    if norm.mean.len() != data.channels {
        return Err(Error::dim("preprocess", alloc::format!("normalization has {} channels, data {}", norm.mean.len(), data.channels)));
    }
    let (th, tw, c) = (target.0, target.1, data.channels);
    let plane = th * tw;
    let mut images = vec![T::zero(); data.len() * c * plane];
    for i in 0..data.len() {
        let img = scaled_resized(data, i, target);
        let dst = &mut images[i * c * plane..(i + 1) * c * plane];
        for p in 0..plane {
            for ch in 0..c {
                dst[ch * plane + p] = T::lit(norm.apply(ch, img[p * c + ch]));
            }
        }
    }
    Ok(Prepared {
        channels: c,
        height: th,
        width: tw,
        num_classes: data.num_classes as usize,
        images,
        labels: data.labels.iter().map(|&l| l as usize).collect(),
    })
}

impl<T: Real> Prepared<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Gathers the given samples into one input tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.images[i * n..(i + 1) * n]);
        }
        let x = Tensor::new(&[indices.len(), self.channels, self.height, self.width], data).expect("batch shape");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Batch index lists in order, or shuffled when a seed is given. The
    /// final partial batch is kept.
    pub fn batch_order(&self, batch_size: usize, shuffle: Option<u64>) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle {
            SplitMix64::new(seed).shuffle(&mut order);
        }
        order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn batches(&self, batch_size: usize, shuffle: Option<u64>) -> impl Iterator<Item = (Tensor<T>, Vec<usize>)> + '_ {
        self.batch_order(batch_size, shuffle).into_iter().map(move |idx| self.batch(&idx))
    }
}
