//! Finite-difference verification of model gradients.

use std::collections::BTreeMap;

use serde::Serialize;

use super::mlp::Mlp;
use super::params::ParamGroup;
use super::transformer::{Input, Transformer};
use crate::error::Result;
use crate::templates::Token;
use crate::tensor::{Graph, Rng, Tensor};

/// Worst relative error per parameter tensor, as
/// `‖g_auto − g_fd‖ / max(‖g_auto‖, ‖g_fd‖, 1e-12)` over sampled
/// coordinates.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheck {
    pub rel_err: BTreeMap<String, f64>,
    pub groups: BTreeMap<String, f64>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.values().copied().fold(0.0, f64::max)
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn coords(len: usize, per_tensor: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= per_tensor {
        (0..len).collect()
    } else {
        rng.distinct(len, per_tensor)
    }
}

fn transformer_loss(model: &Transformer, batch: &[Vec<Token>], targets: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.register(&mut g, |_| false);
    let y = model.build(&mut g, &p, Input::Tokens(batch), None)?;
    let l = g.mse(y, targets)?;
    Ok(g.value(l).item())
}

/// Central differences with step `eps` on up to `per_tensor` coordinates
/// of every parameter, against the reverse-mode gradient of the MSE
/// between outputs and `targets`.
pub fn check_transformer(
    model: &Transformer,
    batch: &[Vec<Token>],
    targets: &Tensor,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let nodes = model.params.register(&mut g, |_| true);
    let y = model.build(&mut g, &nodes, Input::Tokens(batch), None)?;
    let l = g.mse(y, targets)?;
    let grads = g.backward(l)?;

    let mut rng = Rng::new(seed);
    let mut report = GradCheck::default();
    let names: Vec<(String, ParamGroup)> = model.params.entries().into_iter().map(|(n, g, _)| (n, g)).collect();
    let node_list: Vec<_> = nodes.entries().into_iter().map(|(_, _, &n)| n).collect();
    for (idx, ((name, group), node)) in names.iter().zip(node_list).enumerate() {
        let auto = grads.wrt(node);
        let picks = coords(auto.len(), per_tensor, &mut rng);
        let mut a = Vec::with_capacity(picks.len());
        let mut n = Vec::with_capacity(picks.len());
        for &c in &picks {
            let mut plus = model.clone();
            plus.params.values_mut()[idx].1.data_mut()[c] += eps;
            let mut minus = model.clone();
            minus.params.values_mut()[idx].1.data_mut()[c] -= eps;
            let fd = (transformer_loss(&plus, batch, targets)? - transformer_loss(&minus, batch, targets)?) / (2.0 * eps);
            a.push(auto.data()[c]);
            n.push(fd);
        }
        let e = rel(&a, &n);
        report.rel_err.insert(name.clone(), e);
        let slot = report.groups.entry(group.code().to_string()).or_insert(0.0);
        *slot = slot.max(e);
    }
    Ok(report)
}

fn mlp_loss(model: &Mlp, batch: &[Vec<Token>], targets: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.map(|t| g.constant(t.clone()));
    let y = model.build(&mut g, &p, batch)?;
    let l = g.mse(y, targets)?;
    Ok(g.value(l).item())
}

/// As [`check_transformer`], for the MLP baseline.
pub fn check_mlp(
    model: &Mlp,
    batch: &[Vec<Token>],
    targets: &Tensor,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let nodes = model.register(&mut g);
    let y = model.build(&mut g, &nodes, batch)?;
    let l = g.mse(y, targets)?;
    let grads = g.backward(l)?;

    let mut rng = Rng::new(seed);
    let mut report = GradCheck::default();
    let names: Vec<String> = model.params.entries().into_iter().map(|(n, _)| n).collect();
    let node_list: Vec<_> = nodes.entries().into_iter().map(|(_, &n)| n).collect();
    for (idx, (name, node)) in names.iter().zip(node_list).enumerate() {
        let auto = grads.wrt(node);
        // first-layer rows for unused tokens have zero gradient; sample
        // among the rows the batch touches
        let picks: Vec<usize> = if idx == 0 {
            let h = model.config.width;
            let m = model.config.vocab;
            let mut rows: Vec<usize> = batch
                .iter()
                .flat_map(|x| x.iter().enumerate().map(move |(i, &t)| i * m + t))
                .collect();
            rows.sort_unstable();
            rows.dedup();
            let all: Vec<usize> = rows.iter().flat_map(|r| r * h..(r + 1) * h).collect();
            coords(all.len(), per_tensor, &mut rng).into_iter().map(|i| all[i]).collect()
        } else {
            coords(auto.len(), per_tensor, &mut rng)
        };
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &c in &picks {
            let mut plus = model.clone();
            plus.params.values_mut()[idx].data_mut()[c] += eps;
            let mut minus = model.clone();
            minus.params.values_mut()[idx].data_mut()[c] -= eps;
            let fd = (mlp_loss(&plus, batch, targets)? - mlp_loss(&minus, batch, targets)?) / (2.0 * eps);
            a.push(auto.data()[c]);
            n.push(fd);
        }
        let e = rel(&a, &n);
        report.rel_err.insert(name.clone(), e);
        let slot = report.groups.entry(if idx == 0 { "W1".into() } else { "MLP".into() }).or_insert(0.0);
        *slot = slot.max(e);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockStyle, InitScheme, MlpConfig, ModelConfig, Scaling};
    use crate::tensor::Activation;

    fn batch() -> (Vec<Vec<Token>>, Tensor) {
        (
            vec![vec![0, 1, 0], vec![2, 3, 3], vec![4, 0, 5]],
            Tensor::vector(vec![1.0, -1.0, 0.5]),
        )
    }

    fn with_identity(mut t: Transformer) -> Transformer {
        let mut rng = Rng::new(77);
        for l in &mut t.params.layers {
            l.a = Tensor::randn(l.a.shape(), 0.5, &mut rng);
            l.b = Tensor::randn(l.b.shape(), 0.5, &mut rng);
        }
        t
    }

    #[test]
    fn theory_regression_all_groups() {
        let cfg = ModelConfig {
            attn_identity: true,
            value_identity: true,
            activation: Activation::Tanh,
            ..ModelConfig::regression(3, 6, 5, 3, 2, 4)
        };
        let t = with_identity(Transformer::init(cfg, 1, InitScheme::Standard).unwrap());
        let (b, y) = batch();
        let r = check_transformer(&t, &b, &y, 1e-5, 12, 0).unwrap();
        assert_eq!(r.groups.len(), 11);
        assert!(r.max_rel_err() < 1e-5, "{r:?}");
    }

    #[test]
    fn cosine_unit_scaling() {
        let cfg = ModelConfig {
            attn_identity: true,
            value_identity: true,
            scaling: Scaling::Unit,
            activation: Activation::Cosine { b1: 0.8, b2: 0.3 },
            ..ModelConfig::regression(3, 6, 4, 2, 2, 3)
        };
        let mut t = with_identity(Transformer::init(cfg, 2, InitScheme::MeanFieldCopy).unwrap());
        t.params.w_u = Some(Tensor::randn(&[4], 1.0, &mut Rng::new(3)));
        let (b, y) = batch();
        let r = check_transformer(&t, &b, &y, 1e-5, 12, 1).unwrap();
        assert!(r.max_rel_err() < 1e-5, "{r:?}");
    }

    #[test]
    fn practical_stack() {
        let cfg = ModelConfig {
            attn_identity: true,
            value_identity: true,
            block_style: BlockStyle::Practical,
            depth: 2,
            activation: Activation::Tanh,
            ..ModelConfig::regression(3, 6, 5, 3, 2, 4)
        };
        let t = with_identity(Transformer::init(cfg, 4, InitScheme::Standard).unwrap());
        let (b, y) = batch();
        let r = check_transformer(&t, &b, &y, 1e-5, 10, 2).unwrap();
        assert!(r.max_rel_err() < 1e-5, "{r:?}");
    }

    #[test]
    fn mlp_layers() {
        let m = Mlp::init(
            MlpConfig {
                k: 3,
                vocab: 6,
                width: 8,
                depth: 3,
                activation: Activation::Tanh,
            },
            5,
        )
        .unwrap();
        let (b, y) = batch();
        let r = check_mlp(&m, &b, &y, 1e-5, 16, 3).unwrap();
        assert!(r.max_rel_err() < 1e-5, "{r:?}");
    }
}
