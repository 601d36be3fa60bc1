use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::{OptimState, Optimizer};
use crate::error::{Error, Result};
use crate::model::{Input, Mlp, Output, ParamGroup, Transformer};
use crate::templates::{Dataset, Splits, Token};
use crate::tensor::{Graph, NodeId, Rng, Tensor};

/// Losses above this (or non-finite) abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "Optimizer::adam")]
    pub optimizer: Optimizer,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Per-group step sizes overriding `lr`; zero freezes a group.
    #[serde(default)]
    pub group_rates: BTreeMap<ParamGroup, f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Zero evaluates the initialization only.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: Loss,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    1024
}
fn default_epochs() -> usize {
    1000
}
fn default_loss() -> Loss {
    Loss::Mse
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::adam(),
            lr: default_lr(),
            group_rates: BTreeMap::new(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            loss: default_loss(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some((g, r)) = self.group_rates.iter().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("rate for group {g} must be nonnegative, got {r}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn rate(&self, group: Option<ParamGroup>) -> f64 {
        group.and_then(|g| self.group_rates.get(&g).copied()).unwrap_or(self.lr)
    }
}

/// Regression targets or class indices.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Tokens(Vec<Token>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Tokens(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Tokens(v) => Targets::Tokens(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn from_dataset(ds: &Dataset, loss: Loss) -> Result<Targets> {
        match loss {
            Loss::Mse => ds
                .real_labels()
                .map(Targets::Real)
                .ok_or_else(|| Error::Config("squared loss needs real labels".into())),
            Loss::CrossEntropy => ds
                .token_labels()
                .map(Targets::Tokens)
                .ok_or_else(|| Error::Config("cross-entropy needs token labels".into())),
        }
    }
}

/// Records the loss of `out` against `targets`.
pub fn loss_node(g: &mut Graph, out: NodeId, targets: &Targets) -> Result<NodeId> {
    match targets {
        Targets::Real(y) => {
            let t = Tensor::new(vec![y.len()], y.clone())?;
            g.mse(out, &t)
        }
        Targets::Tokens(y) => g.cross_entropy(out, y),
    }
}

/// A model that can be fit by gradient steps.
pub trait Learner: Clone + Send + Sync {
    /// Loss and its gradient with respect to every tensor, in
    /// [`Learner::tensors_mut`] order.
    fn loss_grad(&self, batch: &[Vec<Token>], targets: &Targets) -> Result<(f64, Vec<Tensor>)>;

    fn loss(&self, batch: &[Vec<Token>], targets: &Targets) -> Result<f64>;

    fn tensors_mut(&mut self) -> Vec<(Option<ParamGroup>, &mut Tensor)>;

    fn trainable(&self, _group: Option<ParamGroup>) -> bool {
        true
    }
}

impl Learner for Transformer {
    fn loss_grad(&self, batch: &[Vec<Token>], targets: &Targets) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.params.register(&mut g, |_| true);
        let out = self.build(&mut g, &p, Input::Tokens(batch), None)?;
        let l = loss_node(&mut g, out, targets)?;
        let value = g.value(l).item();
        let mut grads = g.backward(l)?;
        let nodes: Vec<NodeId> = p.entries().into_iter().map(|(_, _, &n)| n).collect();
        let out = nodes
            .into_iter()
            .map(|n| grads.take(n).expect("every parameter is a leaf"))
            .collect();
        Ok((value, out))
    }

    fn loss(&self, batch: &[Vec<Token>], targets: &Targets) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.register(&mut g, |_| false);
        let out = self.build(&mut g, &p, Input::Tokens(batch), None)?;
        let l = loss_node(&mut g, out, targets)?;
        Ok(g.value(l).item())
    }

    fn tensors_mut(&mut self) -> Vec<(Option<ParamGroup>, &mut Tensor)> {
        self.params.values_mut().into_iter().map(|(g, t)| (Some(g), t)).collect()
    }

    fn trainable(&self, group: Option<ParamGroup>) -> bool {
        group.is_none_or(|g| Transformer::trainable(self, g))
    }
}

impl Learner for Mlp {
    fn loss_grad(&self, batch: &[Vec<Token>], targets: &Targets) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.register(&mut g);
        let out = self.build(&mut g, &p, batch)?;
        let l = loss_node(&mut g, out, targets)?;
        let value = g.value(l).item();
        let mut grads = g.backward(l)?;
        let nodes: Vec<NodeId> = p.entries().into_iter().map(|(_, &n)| n).collect();
        Ok((value, nodes.into_iter().map(|n| grads.take(n).expect("leaf")).collect()))
    }

    fn loss(&self, batch: &[Vec<Token>], targets: &Targets) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.map(|t| g.constant(t.clone()));
        let out = self.build(&mut g, &p, batch)?;
        let l = loss_node(&mut g, out, targets)?;
        Ok(g.value(l).item())
    }

    fn tensors_mut(&mut self) -> Vec<(Option<ParamGroup>, &mut Tensor)> {
        self.params.values_mut().into_iter().map(|t| (None, t)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Epoch 0 is the initialization.
    pub records: Vec<EpochRecord>,
    /// Epoch with the smallest validation loss (earliest on ties).
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("log has the initialization record")
    }
}

const EVAL_CHUNK: usize = 1024;

/// Mean loss over a full dataset, evaluated in chunks.
pub fn evaluate<L: Learner>(model: &L, inputs: &[Vec<Token>], targets: &Targets) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for start in (0..inputs.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(inputs.len());
        let idx: Vec<usize> = (start..end).collect();
        total += model.loss(&inputs[start..end], &targets.subset(&idx))? * (end - start) as f64;
    }
    Ok(total / inputs.len() as f64)
}

/// Errors unless the substituted tokens of the three splits are pairwise
/// disjoint.
pub fn check_split_alphabets(splits: &Splits) -> Result<()> {
    let tr = splits.train.substituted_tokens();
    let va = splits.val.substituted_tokens();
    let te = splits.test.substituted_tokens();
    for (a, b, what) in [(&tr, &va, "train/val"), (&tr, &te, "train/test"), (&va, &te, "val/test")] {
        if let Some(t) = a.intersection(b).next() {
            return Err(Error::Validation(format!("{what} alphabets share token {t}")));
        }
    }
    Ok(())
}

fn check_loss(epoch: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}

/// Minibatch training with per-epoch evaluation on all three splits.
pub fn train<L: Learner>(model: &mut L, splits: &Splits, cfg: &TrainConfig) -> Result<TrainingLog> {
    check_split_alphabets(splits)?;
    let data = |ds: &Dataset| -> Result<(Vec<Vec<Token>>, Targets)> { Ok((ds.inputs(), Targets::from_dataset(ds, cfg.loss)?)) };
    let (xtr, ytr) = data(&splits.train)?;
    let (xva, yva) = data(&splits.val)?;
    let (xte, yte) = data(&splits.test)?;
    fit(model, (&xtr, &ytr), (&xva, &yva), (&xte, &yte), cfg)
}

/// [`train`] on explicit arrays. Empty validation or test sets are
/// reported as NaN losses; with an empty validation set the best epoch is
/// the initialization.
pub fn fit<L: Learner>(
    model: &mut L,
    (xtr, ytr): (&[Vec<Token>], &Targets),
    (xva, yva): (&[Vec<Token>], &Targets),
    (xte, yte): (&[Vec<Token>], &Targets),
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let clock = Instant::now();
    let rates: Vec<f64> = {
        let groups: Vec<Option<ParamGroup>> = model.tensors_mut().into_iter().map(|(g, _)| g).collect();
        groups
            .into_iter()
            .map(|g| if model.trainable(g) { cfg.rate(g) } else { 0.0 })
            .collect()
    };
    let sizes: Vec<usize> = model.tensors_mut().iter().map(|(_, t)| t.len()).collect();
    let mut opt = OptimState::new(cfg.optimizer, &sizes);
    let rng = Rng::new(cfg.seed);

    let record = |m: &L, epoch: usize| -> Result<EpochRecord> {
        let r = EpochRecord {
            epoch,
            train_loss: evaluate(m, xtr, ytr)?,
            val_loss: evaluate(m, xva, yva)?,
            test_loss: evaluate(m, xte, yte)?,
        };
        check_loss(epoch, r.train_loss)?;
        Ok(r)
    };

    let mut records = vec![record(model, 0)?];
    let n = xtr.len();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.child_indexed("shuffle", epoch as u64).shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<Token>> = idx.iter().map(|&i| xtr[i].clone()).collect();
            let (l, grads) = model.loss_grad(&batch, &ytr.subset(idx))?;
            check_loss(epoch, l)?;
            let mut tensors: Vec<&mut Tensor> = model.tensors_mut().into_iter().map(|(_, t)| t).collect();
            opt.step(&mut tensors, &grads, &rates);
        }
        records.push(record(model, epoch)?);
    }
    let best_epoch = records
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, r)| if r.val_loss < bv { (i, r.val_loss) } else { (bi, bv) })
        .0;
    Ok(TrainingLog {
        records,
        best_epoch,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    })
}

/// Loss the configuration implies for a transformer.
pub fn loss_for(model: &Transformer) -> Loss {
    match model.config.output {
        Output::Scalar => Loss::Mse,
        Output::VocabLogits => Loss::CrossEntropy,
    }
}
