//! Multi-exit training: the step schedule, size-dependent weight decay,
//! the summed exit loss and the three domain strategies.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::model::{forward_to_depth, BaseNetwork, DomainAdapterSet, Mode, Owner, ParamId, ParamStore};
use crate::rng::derive_seed;
use crate::tensor::{Graph, Real, Sgd, SgdConfig, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// One optimizer over every domain parameter, summed exit loss.
    Joint,
    /// Stage `s` trains block `s` and exit `s` on the exit-`s` loss alone;
    /// earlier stages stay frozen.
    Blockwise,
    /// No adapters: batch norms and heads only.
    ExitsOnly,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Blockwise => "blockwise",
            Strategy::ExitsOnly => "exits_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Strategy::Joint),
            "blockwise" => Ok(Strategy::Blockwise),
            "exits_only" => Ok(Strategy::ExitsOnly),
            _ => Err(Error::Config(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightDecay {
    /// Picked from the training-set size by [`weight_decay_for`].
    BySize,
    Fixed(f64),
}

/// 5e-3 below 5k training images, 5e-4 below 50k, 1e-4 otherwise.
pub fn weight_decay_for(train_size: usize) -> f64 {
    if train_size < 5_000 {
        5e-3
    } else if train_size < 50_000 {
        5e-4
    } else {
        1e-4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs at which the learning rate steps to the next value.
    pub milestones: Vec<usize>,
    /// One more entry than `milestones`.
    pub lr_values: Vec<f64>,
    pub momentum: f64,
    pub weight_decay: WeightDecay,
    pub strategy: Strategy,
    pub seed: u64,
}

impl TrainConfig {
    /// 120 epochs, lr 0.1 / 0.01 from 80 / 0.001 from 100, batch 128.
    pub fn paper() -> Self {
        Self {
            epochs: 120,
            batch_size: 128,
            milestones: vec![80, 100],
            lr_values: vec![0.1, 0.01, 0.001],
            momentum: 0.9,
            weight_decay: WeightDecay::BySize,
            strategy: Strategy::Joint,
            seed: 0,
        }
    }

    /// The same schedule shrunk to 30 epochs (milestones 20 and 26), batch 32.
    pub fn desk() -> Self {
        Self { epochs: 30, batch_size: 32, milestones: vec![20, 26], ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) || self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::Config(format!("milestones {:?} must increase strictly and stay below {}", self.milestones, self.epochs)));
        }
        if self.lr_values.len() != self.milestones.len() + 1 {
            return Err(Error::Config(format!("{} learning rates for {} milestones", self.lr_values.len(), self.milestones.len())));
        }
        if self.lr_values.iter().chain([&self.momentum]).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("learning rates and momentum must be finite and non-negative".into()));
        }
        if let WeightDecay::Fixed(w) = self.weight_decay {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("weight decay {w}")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self)
    }

    pub fn weight_decay_value(&self, train_size: usize) -> f64 {
        match self.weight_decay {
            WeightDecay::BySize => weight_decay_for(train_size),
            WeightDecay::Fixed(w) => w,
        }
    }
}

/// Piecewise-constant learning rate.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let passed = config.milestones.iter().filter(|&&m| epoch >= m).count();
    config.lr_values[passed]
}

/// Sum of the per-exit cross entropies. Returns the total and each term.
pub fn multi_exit_loss<T: Real>(g: &mut Graph<T>, logits: &[Var], labels: &[usize]) -> Result<(Var, Vec<Var>)> {
    let (first, rest) = logits.split_first().ok_or_else(|| Error::Config("multi-exit loss needs at least one exit".into()))?;
    let mut terms = vec![g.softmax_cross_entropy(*first, labels)?];
    let mut total = terms[0];
    for &l in rest {
        let ce = g.softmax_cross_entropy(l, labels)?;
        terms.push(ce);
        total = g.add(total, ce)?;
    }
    Ok((total, terms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean train loss per exit; NaN for exits not trained in this epoch.
    pub loss: Vec<f64>,
    /// Validation accuracy per exit, in [0, 1].
    pub val_acc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub num_exits: usize,
    pub records: Vec<EpochRecord>,
    /// Seconds, when a clock was supplied.
    pub wall_time: Option<f64>,
    /// Index into `records` of the best mean validation accuracy.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn new(num_exits: usize) -> Self {
        Self { num_exits, ..Self::default() }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec![String::from("epoch"), String::from("lr")];
        cols.extend((1..=self.num_exits).map(|e| format!("loss_e{e}")));
        cols.extend((1..=self.num_exits).map(|e| format!("acc_e{e}")));
        cols.join(",")
    }
}

/// Observer for progress and timing; the no_std core has no clock.
pub trait TrainHooks {
    fn elapsed_secs(&self) -> Option<f64> {
        None
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

/// Hooks that do nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Result of training a domain: final parameters stay in the adapter set,
/// the best-validation snapshot is returned alongside.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: TrainHistory,
    pub best: ParamStore<T>,
}

/// Anything producing one logit tensor per exit.
pub trait MultiExitPredictor<T: Real> {
    fn num_exits(&self) -> usize;
    fn predict(&mut self, x: Tensor<T>) -> Result<Vec<Tensor<T>>>;
}

/// An adapted network in evaluation mode.
pub struct Adapted<'a, T> {
    pub base: &'a BaseNetwork<T>,
    pub domain: &'a mut DomainAdapterSet<T>,
}

impl<T: Real> MultiExitPredictor<T> for Adapted<'_, T> {
    fn num_exits(&self) -> usize {
        self.domain.num_exits()
    }

    fn predict(&mut self, x: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let depth = self.base.config.num_blocks;
        let f = forward_to_depth(&mut g, self.base, self.domain, x, Mode::Eval, depth)?;
        Ok(f.all_logits()?.into_iter().map(|v| g.value(v).clone()).collect())
    }
}

/// The base network on its own domain (single exit).
impl<T: Real> MultiExitPredictor<T> for BaseNetwork<T> {
    fn num_exits(&self) -> usize {
        1
    }

    fn predict(&mut self, x: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, x, Mode::Eval)?;
        Ok(vec![g.value(self.logits_of(&f)).clone()])
    }
}

/// Correct top-1 counts per exit over `total` samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub correct: Vec<usize>,
    pub total: usize,
}

impl Evaluation {
    pub fn accuracy(&self) -> Vec<f64> {
        self.correct.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows of `logits` (`N × C`) whose argmax equals the label.
pub fn count_correct<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits.data().chunks(c).zip(labels).filter(|(row, &y)| argmax(row) == y).count()
}

pub fn evaluate<T: Real, P: MultiExitPredictor<T> + ?Sized>(model: &mut P, data: &Prepared<T>, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut correct = vec![0; model.num_exits()];
    for idx in data.batch_order(batch_size, None) {
        let (x, y) = data.batch(&idx);
        for (c, logits) in correct.iter_mut().zip(model.predict(x)?) {
            *c += count_correct(&logits, &y);
        }
    }
    Ok(Evaluation { correct, total: data.len() })
}

fn numeric(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { epoch, batch },
        e => e,
    }
}

/// A step that overflowed shows up as non-finite parameters.
fn check_params<T: Real>(store: &ParamStore<T>, indices: &[usize], epoch: usize, batch: usize) -> Result<()> {
    let ok = store.ids().filter(|id| indices.contains(&id.index())).all(|id| store.get(id).is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, batch })
    }
}

fn check_data<T: Real>(train: &Prepared<T>, val: &Prepared<T>, classes: usize) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptySplit);
    }
    if train.num_classes != classes || val.num_classes != classes {
        return Err(Error::Config(format!("data has {} classes, model {classes}", train.num_classes)));
    }
    Ok(())
}

fn ids_to_indices(ids: &[ParamId]) -> Vec<usize> {
    ids.iter().map(|id| id.index()).collect()
}

fn mean_acc(acc: &[f64]) -> f64 {
    acc.iter().sum::<f64>() / acc.len() as f64
}

/// One optimization phase of domain training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    /// Learnable ids updated in this stage.
    pub params: Vec<ParamId>,
    /// Exits (1-based) whose losses are summed.
    pub exits: Vec<usize>,
    /// Blocks evaluated in the forward pass.
    pub depth: usize,
}

/// The stages a strategy runs: one for joint and exits-only training, one
/// per block for blockwise training.
pub fn training_stages<T: Real>(domain: &DomainAdapterSet<T>, strategy: Strategy) -> Vec<Stage> {
    let k = domain.num_exits();
    match strategy {
        Strategy::Joint | Strategy::ExitsOnly => {
            let mut params = Vec::new();
            for s in 1..=k {
                params.extend(domain.params.block_ids(s));
                params.extend(domain.params.head_ids(s));
            }
            let exits = (1..=k).filter(|&e| domain.params.heads[e - 1].is_some()).collect();
            vec![Stage { params, exits, depth: k }]
        }
        Strategy::Blockwise => (1..=k)
            .map(|s| {
                let mut params = domain.params.block_ids(s);
                params.extend(domain.params.head_ids(s));
                Stage { params, exits: vec![s], depth: s }
            })
            .collect(),
    }
}

/// Trains a domain's parameters against the frozen base. For the blockwise
/// strategy the schedule runs once per stage, so the history holds
/// `K · epochs` records.
pub fn train_domain<T: Real>(
    base: &BaseNetwork<T>,
    domain: &mut DomainAdapterSet<T>,
    train: &Prepared<T>,
    val: &Prepared<T>,
    config: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if !base.is_frozen() {
        return Err(Error::BaseNotFrozen);
    }
    if config.strategy == Strategy::ExitsOnly && domain.adapt {
        return Err(Error::Config("exits_only training needs an adapter set without adapters".into()));
    }
    check_data(train, val, domain.num_classes)?;
    let k = domain.num_exits();
    let stages = training_stages(domain, config.strategy);

    let wd = config.weight_decay_value(train.len());
    let mut history = TrainHistory::new(k);
    let mut best = (f64::NEG_INFINITY, domain.store.clone());
    for (stage, Stage { params: ids, exits, depth }) in stages.into_iter().enumerate() {
        domain.store.set_trainable_only(&ids);
        domain.store.zero_grads();
        let mut opt = Sgd::new(SgdConfig { lr: config.lr_values[0], momentum: config.momentum, weight_decay: wd }, ids_to_indices(&domain.store.active()));
        for e in 0..config.epochs {
            let epoch = history.records.len();
            let lr = config.lr_at(e);
            opt.set_lr(lr);
            let mut loss_sum = vec![0.0; k];
            let order = train.batch_order(config.batch_size, Some(derive_seed(config.seed, &format!("domain/stage{stage}/epoch{e}"))));
            for (b, idx) in order.iter().enumerate() {
                let (x, y) = train.batch(idx);
                let mut g = Graph::new();
                let f = forward_to_depth(&mut g, base, domain, x, Mode::Train, depth).map_err(|err| numeric(err, epoch, b))?;
                let logits: Vec<Var> = exits.iter().map(|&e| f.logits[e - 1].expect("trained exits have heads")).collect();
                let (total, terms) = multi_exit_loss(&mut g, &logits, &y).map_err(|err| numeric(err, epoch, b))?;
                if !g.value(total).item().is_finite() {
                    return Err(Error::Diverged { epoch, batch: b });
                }
                for (&e, t) in exits.iter().zip(&terms) {
                    loss_sum[e - 1] += g.value(*t).item().as_f64() * y.len() as f64;
                }
                let grads = g.backward(total).map_err(|err| numeric(err, epoch, b))?;
                f.bindings.accumulate(&grads, Owner::Domain, &mut domain.store);
                opt.step(domain.store.tensors_mut());
                check_params(&domain.store, opt.params(), epoch, b)?;
            }
            let loss = (0..k).map(|i| if exits.contains(&(i + 1)) { loss_sum[i] / train.len() as f64 } else { f64::NAN }).collect();
            // an overflow surfacing only in validation is blamed on the last step
            let val_acc = evaluate(&mut Adapted { base, domain: &mut *domain }, val, config.batch_size)
                .map_err(|err| numeric(err, epoch, order.len() - 1))?
                .accuracy();
            let score = mean_acc(&val_acc);
            if score > best.0 {
                best = (score, domain.store.clone());
                history.best_epoch = Some(epoch);
            }
            let record = EpochRecord { epoch, lr, loss, val_acc };
            hooks.on_epoch(&record);
            history.records.push(record);
        }
    }
    domain.store.set_trainable_only(&[]);
    domain.store.zero_grads();
    history.wall_time = hooks.elapsed_secs();
    Ok(TrainOutcome { history, best: best.1 })
}

/// Single-exit training of every base parameter and the base's own
/// classifier. Freezing afterwards is up to the caller.
pub fn train_base<T: Real>(
    base: &mut BaseNetwork<T>,
    train: &Prepared<T>,
    val: &Prepared<T>,
    config: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainHistory> {
    config.validate()?;
    if base.is_frozen() {
        return Err(Error::BaseFrozen);
    }
    check_data(train, val, base.num_classes)?;
    let wd = config.weight_decay_value(train.len());
    let sgd = |store: &ParamStore<T>| {
        let ids: Vec<ParamId> = store.trainable().collect();
        Sgd::new(SgdConfig { lr: config.lr_values[0], momentum: config.momentum, weight_decay: wd }, ids_to_indices(&ids))
    };
    let shared_ids: Vec<ParamId> = base.shared_store.trainable().collect();
    let home_ids: Vec<ParamId> = base.home_store.trainable().collect();
    base.shared_store.set_trainable_only(&shared_ids);
    base.home_store.set_trainable_only(&home_ids);
    let mut opt_shared = sgd(&base.shared_store);
    let mut opt_home = sgd(&base.home_store);
    let mut history = TrainHistory::new(1);
    let mut best = f64::NEG_INFINITY;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        opt_shared.set_lr(lr);
        opt_home.set_lr(lr);
        let mut loss_sum = 0.0;
        let order = train.batch_order(config.batch_size, Some(derive_seed(config.seed, &format!("base/epoch{epoch}"))));
        for (b, idx) in order.iter().enumerate() {
            let (x, y) = train.batch(idx);
            let mut g = Graph::new();
            let f = base.forward(&mut g, x, Mode::Train).map_err(|err| numeric(err, epoch, b))?;
            let logits = base.logits_of(&f);
            let loss = g.softmax_cross_entropy(logits, &y).map_err(|err| numeric(err, epoch, b))?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            loss_sum += value * y.len() as f64;
            let grads = g.backward(loss).map_err(|err| numeric(err, epoch, b))?;
            base.accumulate(&f.bindings, &grads);
            opt_shared.step(base.shared_store.tensors_mut());
            opt_home.step(base.home_store.tensors_mut());
            check_params(&base.shared_store, opt_shared.params(), epoch, b)?;
            check_params(&base.home_store, opt_home.params(), epoch, b)?;
        }
        let val_acc = evaluate(base, val, config.batch_size).map_err(|err| numeric(err, epoch, order.len() - 1))?.accuracy();
        if val_acc[0] > best {
            best = val_acc[0];
            history.best_epoch = Some(epoch);
        }
        let record = EpochRecord { epoch, lr, loss: vec![loss_sum / train.len() as f64], val_acc };
        hooks.on_epoch(&record);
        history.records.push(record);
    }
    base.shared_store.zero_grads();
    base.home_store.zero_grads();
    history.wall_time = hooks.elapsed_secs();
    Ok(history)
}
