//! Forward passes over the frozen trunk and a domain's parameters.

use alloc::format;
use alloc::vec::Vec;

use super::base::{BaseNetwork, SharedWeights};
use super::domain::{DomainAdapterSet, DomainParams, ExitHead, HeadBody};
use super::params::{BnIds, ConvIds, LinearIds, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{BnMode, BnState, Grads, Graph, Real, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Stored statistics, nothing mutated.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Shared,
    Domain,
}

/// Which graph leaf each parameter was bound to during a forward pass.
#[derive(Debug, Default, Clone)]
pub struct Bindings {
    entries: Vec<(Owner, ParamId, Var)>,
}

impl Bindings {
    pub fn iter(&self) -> impl Iterator<Item = &(Owner, ParamId, Var)> {
        self.entries.iter()
    }

    /// Leaf bound to `(owner, id)`, if the parameter took part in the pass.
    pub fn var(&self, owner: Owner, id: ParamId) -> Option<Var> {
        self.entries.iter().find(|(o, p, _)| *o == owner && *p == id).map(|e| e.2)
    }

    /// Adds the gradients of all `owner` parameters that require them into
    /// their tensors in `store`.
    pub fn accumulate<T: Real>(&self, grads: &Grads<T>, owner: Owner, store: &mut ParamStore<T>) {
        for &(o, id, var) in &self.entries {
            if o == owner && store.get(id).requires_grad {
                grads.accumulate_into(var, store.get_mut(id));
            }
        }
    }
}

/// Logits of every evaluated exit plus the parameter bindings.
#[derive(Debug)]
pub struct Forward {
    /// `logits[e]` for exit `e + 1`; only exits that have a head and lie
    /// within the evaluated depth are present.
    pub logits: Vec<Option<Var>>,
    /// Output of each evaluated block.
    pub block_outputs: Vec<Var>,
    pub bindings: Bindings,
}

impl Forward {
    /// Logits of all exits, failing if any is missing.
    pub fn all_logits(&self) -> Result<Vec<Var>> {
        self.logits.iter().map(|l| l.ok_or_else(|| Error::Config("exit not evaluated".into()))).collect()
    }
}

/// `W∗x + α∗x`: a base convolution with an optional parallel 1x1 adapter
/// sharing its stride. Pre-activation.
pub fn adapted_sum<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
    adapter: Option<(Var, Option<Var>)>,
) -> Result<Var> {
    let base = g.conv2d(x, weight, bias, stride, pad)?;
    let Some((aw, ab)) = adapter else { return Ok(base) };
    let ws = g.value(aw).shape();
    let xs = g.value(x).shape();
    if ws.len() != 4 || ws[2] != 1 || ws[3] != 1 || ws[1] != xs[1] || ws[0] != g.value(weight).shape()[0] {
        return Err(Error::dim("adapted_conv", format!("adapter {ws:?} does not parallel filter {:?}", g.value(weight).shape())));
    }
    let side = g.conv2d(x, aw, ab, stride, 0)?;
    g.add(base, side)
}

/// `relu(W∗x + α∗x)`.
pub fn adapted_conv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
    adapter: Option<(Var, Option<Var>)>,
) -> Result<Var> {
    let s = adapted_sum(g, x, weight, bias, stride, pad, adapter)?;
    g.relu(s)
}

struct Ctx<'a, T> {
    g: &'a mut Graph<T>,
    shared: &'a ParamStore<T>,
    dom: &'a mut ParamStore<T>,
    mode: Mode,
    binds: Bindings,
}

impl<T: Real> Ctx<'_, T> {
    fn leaf(&mut self, owner: Owner, id: ParamId) -> Var {
        if let Some(v) = self.binds.var(owner, id) {
            return v;
        }
        let t = match owner {
            Owner::Shared => self.shared.get(id),
            Owner::Domain => self.dom.get(id),
        };
        let var = self.g.leaf(t.clone(), t.requires_grad);
        self.binds.entries.push((owner, id, var));
        var
    }

    fn conv_vars(&mut self, owner: Owner, c: &ConvIds) -> (Var, Var) {
        (self.leaf(owner, c.weight), self.leaf(owner, c.bias))
    }

    fn bn(&mut self, ids: &BnIds, x: Var) -> Result<Var> {
        let gamma = self.leaf(Owner::Domain, ids.gamma);
        let beta = self.leaf(Owner::Domain, ids.beta);
        let (mean, var) = self.dom.pair_mut(ids.mean, ids.var);
        let state = BnState { running_mean: mean.data_mut(), running_var: var.data_mut(), momentum: T::lit(BN_MOMENTUM), eps: T::lit(BN_EPS) };
        let mode = match self.mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        };
        self.g.batchnorm(x, gamma, beta, state, mode)
    }

    fn linear(&mut self, ids: &LinearIds, x: Var) -> Result<Var> {
        let w = self.leaf(Owner::Domain, ids.weight);
        let b = self.leaf(Owner::Domain, ids.bias);
        self.g.linear(x, w, Some(b))
    }

    fn adapted(&mut self, x: Var, base: &ConvIds, adapter: Option<&ConvIds>) -> Result<Var> {
        let (w, b) = self.conv_vars(Owner::Shared, base);
        let side = adapter.map(|a| {
            let (aw, ab) = self.conv_vars(Owner::Domain, a);
            (aw, Some(ab))
        });
        adapted_sum(self.g, x, w, Some(b), base.stride, base.pad, side)
    }

    /// Stem and the first `depth` blocks; returns each block's output.
    fn trunk(&mut self, shared: &SharedWeights, dom: &DomainParams, x: Var, depth: usize) -> Result<Vec<Var>> {
        let mut h = self.adapted(x, &shared.stem, None)?;
        h = self.bn(&dom.stem_bn, h)?;
        h = self.g.relu(h)?;
        let mut outs = Vec::with_capacity(depth);
        for (convs, norms) in shared.units.iter().zip(&dom.units).take(depth) {
            for (c, n) in convs.iter().zip(norms) {
                let mut y = self.adapted(h, &c.conv1, n.adapter1.as_ref())?;
                y = self.bn(&n.bn1, y)?;
                y = self.g.relu(y)?;
                y = self.adapted(y, &c.conv2, n.adapter2.as_ref())?;
                y = self.bn(&n.bn2, y)?;
                let skip = match &c.projection {
                    Some(p) => self.adapted(h, p, None)?,
                    None => h,
                };
                y = self.g.add(y, skip)?;
                h = self.g.relu(y)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }

    fn head(&mut self, head: &ExitHead, h: Var) -> Result<Var> {
        let mut y = self.bn(&head.bn, h)?;
        y = self.g.relu(y)?;
        if let HeadBody::Conv1x1(c) = &head.body {
            let (w, b) = self.conv_vars(Owner::Domain, c);
            y = self.g.conv2d(y, w, Some(b), 1, 0)?;
            y = self.g.relu(y)?;
        }
        y = self.g.global_avg_pool(y)?;
        if let HeadBody::Mlp(layers) = &head.body {
            for l in layers {
                y = self.linear(l, y)?;
                y = self.g.relu(y)?;
            }
        }
        self.linear(&head.classifier, y)
    }
}

fn check_input<T: Real>(config: &super::NetworkConfig, x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != config.in_channels || s[2] != config.input_height || s[3] != config.input_width || s[0] == 0 {
        return Err(Error::dim(
            "forward",
            format!("input {s:?}, expected N×{}×{}×{}", config.in_channels, config.input_height, config.input_width),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run<T: Real>(
    g: &mut Graph<T>,
    config: &super::NetworkConfig,
    shared_store: &ParamStore<T>,
    shared: &SharedWeights,
    dom_store: &mut ParamStore<T>,
    dom: &DomainParams,
    x: Tensor<T>,
    mode: Mode,
    depth: usize,
) -> Result<Forward> {
    check_input(config, &x)?;
    let mut ctx = Ctx { g, shared: shared_store, dom: dom_store, mode, binds: Bindings::default() };
    let xv = ctx.g.leaf(x, false);
    let outs = ctx.trunk(shared, dom, xv, depth)?;
    let mut logits = alloc::vec![None; dom.heads.len()];
    for (e, h) in outs.iter().enumerate() {
        if let Some(head) = &dom.heads[e] {
            logits[e] = Some(ctx.head(head, *h)?);
        }
    }
    Ok(Forward { logits, block_outputs: outs, bindings: ctx.binds })
}

impl<T: Real> BaseNetwork<T> {
    /// The base network on its own domain; returns the last-exit logits.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Tensor<T>, mode: Mode) -> Result<Forward> {
        let depth = self.config.num_blocks;
        run(g, &self.config, &self.shared_store, &self.shared, &mut self.home_store, &self.home, x, mode, depth)
    }

    /// Last-exit logits of a [`BaseNetwork::forward`] pass.
    pub fn logits_of(&self, f: &Forward) -> Var {
        f.logits[self.config.num_blocks - 1].expect("base has a last-exit head")
    }

    /// Applies gradients from a [`BaseNetwork::forward`] pass to the shared
    /// and home parameters that require them.
    pub fn accumulate(&mut self, bindings: &Bindings, grads: &Grads<T>) {
        bindings.accumulate(grads, Owner::Shared, &mut self.shared_store);
        bindings.accumulate(grads, Owner::Domain, &mut self.home_store);
    }
}

/// Runs the frozen trunk with the domain's adapters and returns the logits
/// of all `K` exits.
pub fn forward_multi_exit<T: Real>(
    g: &mut Graph<T>,
    base: &BaseNetwork<T>,
    domain: &mut DomainAdapterSet<T>,
    x: Tensor<T>,
    mode: Mode,
) -> Result<Forward> {
    let depth = base.config.num_blocks;
    forward_to_depth(g, base, domain, x, mode, depth)
}

/// Like [`forward_multi_exit`] but stops after `depth` blocks.
pub fn forward_to_depth<T: Real>(
    g: &mut Graph<T>,
    base: &BaseNetwork<T>,
    domain: &mut DomainAdapterSet<T>,
    x: Tensor<T>,
    mode: Mode,
    depth: usize,
) -> Result<Forward> {
    if domain.base_hash != base.config_hash() {
        return Err(Error::ParamMismatch("adapter set belongs to a different base configuration".into()));
    }
    if depth == 0 || depth > base.config.num_blocks {
        return Err(Error::Config(format!("depth {depth} outside 1..={}", base.config.num_blocks)));
    }
    run(g, &base.config, &base.shared_store, &base.shared, &mut domain.store, &domain.params, x, mode, depth)
}
