use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with momentum and L2 weight decay folded into the gradient:
/// `g' = g + wd·w`, `v = μ·v + g'`, `w -= lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    params: Vec<usize>,
    velocity: BTreeMap<usize, Vec<T>>,
}

impl<T: Real> Sgd<T> {
    /// Optimizer over the tensors at `params` (indices into the slice later
    /// passed to [`Sgd::step`]).
    pub fn new(config: SgdConfig, params: Vec<usize>) -> Self {
        Self { config, params, velocity: BTreeMap::new() }
    }

    pub fn params(&self) -> &[usize] {
        &self.params
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update and zeroes the gradients. Parameters without a
    /// gradient buffer are skipped.
    pub fn step(&mut self, tensors: &mut [Tensor<T>]) {
        let lr = T::lit(self.config.lr);
        let mom = T::lit(self.config.momentum);
        let wd = T::lit(self.config.weight_decay);
        for &id in &self.params {
            let t = &mut tensors[id];
            let Some(mut grad) = t.grad.take() else { continue };
            let v = self.velocity.entry(id).or_insert_with(|| vec![T::zero(); grad.len()]);
            for ((w, g), vi) in t.data_mut().iter_mut().zip(&grad).zip(v.iter_mut()) {
                let g = *g + wd * *w;
                *vi = mom * *vi + g;
                *w -= lr * *vi;
            }
            grad.fill(T::zero());
            t.grad = Some(grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64(&[1], &[w]).unwrap()]
    }

    fn run(cfg: SgdConfig, steps: usize) -> f64 {
        let mut ps = one_param(1.0);
        let mut opt = Sgd::new(cfg, vec![0]);
        for _ in 0..steps {
            ps[0].accumulate_grad(&[1.0]);
            opt.step(&mut ps);
        }
        ps[0].data()[0]
    }

    #[test]
    fn plain_step() {
        let w = run(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 }, 1);
        assert!((w - 0.9).abs() < 1e-15);
    }

    #[test]
    fn decay_is_added_to_gradient() {
        let w = run(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.1 }, 1);
        assert!((w - 0.89).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let w = run(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0 }, 2);
        assert!((w - 0.71).abs() < 1e-12);
    }

    #[test]
    fn grads_are_zeroed() {
        let mut ps = one_param(1.0);
        ps[0].accumulate_grad(&[3.0]);
        Sgd::new(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 }, vec![0]).step(&mut ps);
        assert_eq!(ps[0].grad.as_deref(), Some(&[0.0][..]));
    }
}
