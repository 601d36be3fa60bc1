use serde::Serialize;

use super::fit::{fit, TrainConfig, Targets};
use super::probe::mean_se;
use crate::error::{Error, Result};
use crate::model::{pair_coupling, Mlp, MlpConfig};
use crate::templates::{Dataset, Token};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationReport {
    pub seeds: usize,
    pub mean_f1: f64,
    pub se_f1: f64,
    pub mean_f2: f64,
    pub se_f2: f64,
    /// `sqrt(se_f1² + se_f2²)`
    pub pooled_se: f64,
    /// For every seed, training from the coupled initialization gives
    /// `f(x2)` bit-identical to `f(x1)` of the uncoupled run.
    pub exact_coupling: bool,
    pub final_train_loss: Vec<f64>,
}

/// Trains one MLP per seed on `train` and reads it out on two strings of
/// unseen tokens. Each seed also trains the copy whose first-layer columns
/// are permuted so that `x1` reads as `x2`, on the same sample order.
pub fn mlp_permutation_test(
    cfg: &MlpConfig,
    train_cfg: &TrainConfig,
    train: &Dataset,
    x1: &[Token],
    x2: &[Token],
    seeds: &[u64],
) -> Result<PermutationReport> {
    let seen = train.inputs().into_iter().flatten().collect::<std::collections::BTreeSet<Token>>();
    if let Some(t) = x1.iter().chain(x2).find(|t| seen.contains(t)) {
        return Err(Error::Contract(format!("token {t} appears in the training set")));
    }
    if seeds.is_empty() {
        return Err(Error::Config("permutation test needs at least one seed".into()));
    }
    let perms = pair_coupling(x1, x2, cfg.vocab)?;
    let xtr = train.inputs();
    let ytr = Targets::from_dataset(train, train_cfg.loss)?;
    let none: Vec<Vec<Token>> = Vec::new();
    let empty = Targets::Real(Vec::new());

    let (mut f1, mut f2, mut losses) = (Vec::new(), Vec::new(), Vec::new());
    let mut exact = true;
    for &seed in seeds {
        let mut a = Mlp::init(cfg.clone(), seed)?;
        let mut b = a.coupled(&perms)?;
        let tc = TrainConfig { seed, ..train_cfg.clone() };
        let log = fit(&mut a, (&xtr, &ytr), (&none, &empty), (&none, &empty), &tc)?;
        fit(&mut b, (&xtr, &ytr), (&none, &empty), (&none, &empty), &tc)?;
        let ya = a.forward_mlp(&[x1.to_vec(), x2.to_vec()])?;
        let yb = b.forward_mlp(&[x2.to_vec()])?;
        exact &= ya[0].to_bits() == yb[0].to_bits();
        f1.push(ya[0]);
        f2.push(ya[1]);
        losses.push(log.last().train_loss);
    }
    let (m1, s1) = mean_se(&f1);
    let (m2, s2) = mean_se(&f2);
    Ok(PermutationReport {
        seeds: seeds.len(),
        mean_f1: m1,
        se_f1: s1,
        mean_f2: m2,
        se_f2: s2,
        pooled_se: (s1 * s1 + s2 * s2).sqrt(),
        exact_coupling: exact,
        final_train_loss: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{builtin, sample_dataset, Alphabet, Builtin};
    use crate::tensor::Activation;

    fn setup() -> (MlpConfig, Dataset) {
        let task = builtin(&Builtin::SameDifferent).unwrap().with_vocab_size(40).unwrap();
        let ds = sample_dataset(&task, 32, &Alphabet::range(0, 30), 1).unwrap();
        let cfg = MlpConfig { k: 2, vocab: 40, width: 16, depth: 2, activation: Activation::Relu };
        (cfg, ds)
    }

    #[test]
    fn unseen_pair_is_indistinguishable() {
        let (cfg, ds) = setup();
        let tc = TrainConfig { epochs: 20, batch_size: 8, lr: 1e-2, ..TrainConfig::default() };
        let seeds: Vec<u64> = (0..50).collect();
        let r = mlp_permutation_test(&cfg, &tc, &ds, &[35, 35], &[35, 36], &seeds).unwrap();
        assert!(r.exact_coupling);
        assert!((r.mean_f1 - r.mean_f2).abs() < 3.0 * r.pooled_se, "{r:?}");
    }

    #[test]
    fn seen_tokens_rejected() {
        let (cfg, ds) = setup();
        let t = ds.samples[0].tokens[0];
        let err = mlp_permutation_test(&cfg, &TrainConfig::default(), &ds, &[t, t], &[38, 39], &[0]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
