//! Named parameter tables and the id bundles that index into them.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Trainable,
    /// Running statistics; updated in the forward pass, never by the optimizer.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), kinds: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, kind: ParamKind, mut t: Tensor<T>) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        t.requires_grad = kind == ParamKind::Trainable;
        self.names.push(name);
        self.kinds.push(kind);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// `(name, kind, tensor)` in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.names.iter().zip(&self.kinds).zip(&self.tensors).map(|((n, k), t)| (n.as_str(), *k, t))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kinds[id.0] == ParamKind::Trainable)
    }

    /// Ids of trainable parameters whose `requires_grad` flag is set.
    pub fn active(&self) -> Vec<ParamId> {
        self.trainable().filter(|&id| self.tensors[id.0].requires_grad).collect()
    }

    /// Element count over the given ids.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.tensors[id.0].numel()).sum()
    }

    /// Sets `requires_grad` on exactly the trainable ids in `ids`.
    pub fn set_trainable_only(&mut self, ids: &[ParamId]) {
        for id in self.ids() {
            let on = self.kinds[id.0] == ParamKind::Trainable && ids.contains(&id);
            self.tensors[id.0].requires_grad = on;
        }
    }

    pub fn freeze_all(&mut self) {
        for t in &mut self.tensors {
            t.requires_grad = false;
            t.grad = None;
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Two distinct entries borrowed mutably at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a.0, b.0, "pair_mut needs distinct ids");
        if a.0 < b.0 {
            let (lo, hi) = self.tensors.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.tensors.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    /// Overwrites values from `other`, matched by name; shapes must agree
    /// and every entry of `self` must be present.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for i in 0..self.tensors.len() {
            let name = &self.names[i];
            let src = other.find(name).ok_or_else(|| Error::ParamMismatch(alloc::format!("missing tensor {name}")))?;
            let src = other.get(src);
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::ParamMismatch(alloc::format!(
                    "tensor {name}: shape {:?}, expected {:?}",
                    src.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i].data_mut().copy_from_slice(src.data());
        }
        if other.len() != self.len() {
            return Err(Error::ParamMismatch(alloc::format!("{} tensors, expected {}", other.len(), self.len())));
        }
        Ok(())
    }

    /// CRC32 over names and the IEEE bit patterns of every value.
    pub fn checksum(&self, hasher: &mut crc32fast::Hasher) {
        for (name, _, t) in self.entries() {
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(&v.as_f64().to_bits().to_le_bytes());
            }
        }
    }
}

/// Gaussian-initialized tensor with its own seed derived from `name`.
pub(crate) fn gaussian<T: Real>(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
    let mut rng = SplitMix64::new(derive_seed(seed, name));
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::lit(rng.normal() * std)).collect()).expect("shape matches")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvIds {
    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// `c×c` convolution, He-initialized and scaled by `gain`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn init<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let std = gain * libm::sqrt(2.0 / (cin * k * k) as f64);
        let wname = alloc::format!("{prefix}.weight");
        let w = gaussian(seed, &wname, &[cout, cin, k, k], std);
        let weight = store.insert(wname, ParamKind::Trainable, w);
        let bias = store.insert(alloc::format!("{prefix}.bias"), ParamKind::Trainable, Tensor::zeros(&[cout]));
        Self { weight, bias, stride, pad: k / 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BnIds {
    pub fn learnable(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }

    pub fn all(&self) -> [ParamId; 4] {
        [self.gamma, self.beta, self.mean, self.var]
    }

    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Self {
        let gamma = store.insert(alloc::format!("{prefix}.gamma"), ParamKind::Trainable, Tensor::full(&[c], T::one()));
        let beta = store.insert(alloc::format!("{prefix}.beta"), ParamKind::Trainable, Tensor::zeros(&[c]));
        let mean = store.insert(alloc::format!("{prefix}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[c]));
        let var = store.insert(alloc::format!("{prefix}.running_var"), ParamKind::Buffer, Tensor::full(&[c], T::one()));
        Self { gamma, beta, mean, var }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearIds {
    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// `fan_in×fan_out` weight with std `gain/sqrt(fan_in)`, zero bias.
    pub(crate) fn init<T: Real>(store: &mut ParamStore<T>, seed: u64, prefix: &str, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let wname = alloc::format!("{prefix}.weight");
        let w = gaussian(seed, &wname, &[fan_in, fan_out], gain / libm::sqrt(fan_in as f64));
        let weight = store.insert(wname, ParamKind::Trainable, w);
        let bias = store.insert(alloc::format!("{prefix}.bias"), ParamKind::Trainable, Tensor::zeros(&[fan_out]));
        Self { weight, bias }
    }
}
