use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fit::{Learner, Targets};
use crate::error::{Error, Result};
use crate::model::{InitScheme, ModelConfig, ParamGroup, Transformer};
use crate::templates::Token;

/// Loss derivatives at t = 0 under gradient flow on the training loss with
/// per-group rates: `dL/dt = −Σ_g η_g ⟨∇_g L_train, ∇_g L⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub d_emb: usize,
    pub heads: usize,
    pub vocab: usize,
    pub rates: BTreeMap<ParamGroup, f64>,
    pub train_contributions: BTreeMap<ParamGroup, f64>,
    pub test_contributions: BTreeMap<ParamGroup, f64>,
    pub dl_train_dt: f64,
    pub dl_test_dt: f64,
}

/// Exact finite-width probe. Groups missing from `rates` have rate zero.
pub fn grad_probe(
    model: &Transformer,
    train_x: &[Vec<Token>],
    train_y: &Targets,
    test_x: &[Vec<Token>],
    test_y: &Targets,
    rates: &BTreeMap<ParamGroup, f64>,
) -> Result<ProbeReport> {
    if let Some((g, r)) = rates.iter().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("rate for group {g} must be nonnegative, got {r}")));
    }
    let (_, g_train) = model.loss_grad(train_x, train_y)?;
    let (_, g_test) = model.loss_grad(test_x, test_y)?;
    let groups: Vec<ParamGroup> = model.params.entries().into_iter().map(|(_, g, _)| g).collect();
    let mut train_c: BTreeMap<ParamGroup, f64> = BTreeMap::new();
    let mut test_c: BTreeMap<ParamGroup, f64> = BTreeMap::new();
    for ((g, a), b) in groups.iter().zip(&g_train).zip(&g_test) {
        let eta = rates.get(g).copied().unwrap_or(0.0);
        *train_c.entry(*g).or_default() -= eta * a.dot(a);
        *test_c.entry(*g).or_default() -= eta * a.dot(b);
    }
    Ok(ProbeReport {
        d_emb: model.config.d_emb,
        heads: model.config.heads,
        vocab: model.config.vocab,
        rates: rates.clone(),
        dl_train_dt: train_c.values().sum(),
        dl_test_dt: test_c.values().sum(),
        train_contributions: train_c,
        test_contributions: test_c,
    })
}

/// The copy-task probe setting: attention-only tied model on single-token
/// inputs, trained on tokens `0..n_train` and tested on token `n_train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyProbe {
    pub d_emb: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default)]
    pub gamma: f64,
    /// Defaults to `d_emb`.
    #[serde(default)]
    pub d_head: Option<usize>,
    /// Adds the per-head `b_h` term and trains only it.
    #[serde(default)]
    pub value_identity: bool,
}

fn default_heads() -> usize {
    4
}
fn default_vocab() -> usize {
    64
}
fn default_n_train() -> usize {
    32
}

impl CopyProbe {
    pub fn new(d_emb: usize, value_identity: bool) -> Self {
        CopyProbe {
            d_emb,
            heads: default_heads(),
            vocab: default_vocab(),
            n_train: default_n_train(),
            gamma: 0.0,
            d_head: None,
            value_identity,
        }
    }

    pub fn model(&self, seed: u64) -> Result<Transformer> {
        if self.n_train >= self.vocab {
            return Err(Error::Config("n_train must leave an unseen test token".into()));
        }
        let mut cfg = ModelConfig::symbolic(1, self.vocab, self.d_emb, self.head_dim(), self.heads);
        cfg.gamma = self.gamma;
        cfg.value_identity = self.value_identity;
        Transformer::init(cfg, seed, InitScheme::MeanFieldCopy)
    }

    pub fn head_dim(&self) -> usize {
        self.d_head.unwrap_or(self.d_emb)
    }

    /// Rates keeping `dL_train/dt` of order one: `η_O = 1/H`,
    /// `η_V = d_emb/d_head`, `η_P = η_E = 1`; or only `η_b = 1/H`.
    pub fn rates(&self) -> BTreeMap<ParamGroup, f64> {
        let h = self.heads as f64;
        if self.value_identity {
            BTreeMap::from([(ParamGroup::ValueIdentity, 1.0 / h)])
        } else {
            BTreeMap::from([
                (ParamGroup::Output, 1.0 / h),
                (ParamGroup::Value, self.d_emb as f64 / self.head_dim() as f64),
                (ParamGroup::Position, 1.0),
                (ParamGroup::Embedding, 1.0),
            ])
        }
    }

    pub fn run(&self, seed: u64) -> Result<ProbeReport> {
        let model = self.model(seed)?;
        let train_x: Vec<Vec<Token>> = (0..self.n_train).map(|t| vec![t]).collect();
        let train_y = Targets::Tokens((0..self.n_train).collect());
        let test_x = vec![vec![self.n_train]];
        let test_y = Targets::Tokens(vec![self.n_train]);
        grad_probe(&model, &train_x, &train_y, &test_x, &test_y, &self.rates())
    }

    /// The large-width limit of `dL_test/dt` when only `b` trains.
    pub fn b_only_limit(&self) -> f64 {
        let m = self.vocab as f64;
        let eta_b = 1.0 / self.heads as f64;
        -(self.heads as f64) * eta_b * (1.0 - 1.0 / m).powi(2)
    }
}

/// `(L(θ − ε η⊙∇L_train) − L(θ)) / ε` on the given set.
pub fn directional_derivative(
    model: &Transformer,
    train_x: &[Vec<Token>],
    train_y: &Targets,
    eval_x: &[Vec<Token>],
    eval_y: &Targets,
    rates: &BTreeMap<ParamGroup, f64>,
    eps: f64,
) -> Result<f64> {
    let (_, g) = model.loss_grad(train_x, train_y)?;
    let base = model.loss(eval_x, eval_y)?;
    let mut moved = model.clone();
    for ((grp, t), gr) in moved.params.values_mut().into_iter().zip(&g) {
        let eta = rates.get(&grp).copied().unwrap_or(0.0);
        t.add_assign_scaled(gr, -eps * eta);
    }
    Ok((moved.loss(eval_x, eval_y)? - base) / eps)
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
