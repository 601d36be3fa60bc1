use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{InitScheme, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Rng, Tensor};

/// Kinds of parameter, used for per-group learning rates and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    #[serde(rename = "E")]
    Embedding,
    #[serde(rename = "P")]
    Position,
    #[serde(rename = "K")]
    Key,
    #[serde(rename = "Q")]
    Query,
    #[serde(rename = "V")]
    Value,
    #[serde(rename = "O")]
    Output,
    #[serde(rename = "a")]
    AttnIdentity,
    #[serde(rename = "b")]
    ValueIdentity,
    #[serde(rename = "A")]
    MlpIn,
    #[serde(rename = "B")]
    MlpOut,
    #[serde(rename = "U")]
    Readout,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 11] = [
        ParamGroup::Embedding,
        ParamGroup::Position,
        ParamGroup::Key,
        ParamGroup::Query,
        ParamGroup::Value,
        ParamGroup::Output,
        ParamGroup::AttnIdentity,
        ParamGroup::ValueIdentity,
        ParamGroup::MlpIn,
        ParamGroup::MlpOut,
        ParamGroup::Readout,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "E",
            ParamGroup::Position => "P",
            ParamGroup::Key => "K",
            ParamGroup::Query => "Q",
            ParamGroup::Value => "V",
            ParamGroup::Output => "O",
            ParamGroup::AttnIdentity => "a",
            ParamGroup::ValueIdentity => "b",
            ParamGroup::MlpIn => "A",
            ParamGroup::MlpOut => "B",
            ParamGroup::Readout => "U",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.code() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?}")))
    }
}

/// One attention layer. Head matrices are stacked as `[H, d_head, d_emb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub w_k: T,
    pub w_q: T,
    pub w_v: T,
    pub w_o: T,
    /// `[H]`
    pub a: T,
    /// `[H]`
    pub b: T,
    /// `[d_mlp, d_emb]`
    pub w_a: Option<T>,
    /// `[d_mlp, d_emb]`
    pub w_b: Option<T>,
}

/// Transformer parameters, generic over storage so the same layout holds
/// tensors, graph nodes or gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    /// `[m, d_emb]`
    pub w_e: T,
    /// `[k, d_emb]`
    pub p: T,
    pub layers: Vec<LayerParams<T>>,
    /// `[d_emb]`, absent for vocabulary-logit models.
    pub w_u: Option<T>,
}

pub type Parameters = Params<Tensor>;

impl<T> Params<T> {
    /// Parameters in declared order, with names and groups.
    pub fn entries(&self) -> Vec<(String, ParamGroup, &T)> {
        let mut out = vec![
            ("w_e".to_string(), ParamGroup::Embedding, &self.w_e),
            ("p".to_string(), ParamGroup::Position, &self.p),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut push = |name: &str, g, t| out.push((format!("layers.{l}.{name}"), g, t));
            push("w_k", ParamGroup::Key, &layer.w_k);
            push("w_q", ParamGroup::Query, &layer.w_q);
            push("w_v", ParamGroup::Value, &layer.w_v);
            push("w_o", ParamGroup::Output, &layer.w_o);
            push("a", ParamGroup::AttnIdentity, &layer.a);
            push("b", ParamGroup::ValueIdentity, &layer.b);
            if let Some(w) = &layer.w_a {
                push("w_a", ParamGroup::MlpIn, w);
            }
            if let Some(w) = &layer.w_b {
                push("w_b", ParamGroup::MlpOut, w);
            }
        }
        if let Some(w) = &self.w_u {
            out.push(("w_u".to_string(), ParamGroup::Readout, w));
        }
        out
    }

    /// Same order as [`Params::entries`].
    pub fn values_mut(&mut self) -> Vec<(ParamGroup, &mut T)> {
        let mut out: Vec<(ParamGroup, &mut T)> = vec![
            (ParamGroup::Embedding, &mut self.w_e),
            (ParamGroup::Position, &mut self.p),
        ];
        for layer in &mut self.layers {
            out.push((ParamGroup::Key, &mut layer.w_k));
            out.push((ParamGroup::Query, &mut layer.w_q));
            out.push((ParamGroup::Value, &mut layer.w_v));
            out.push((ParamGroup::Output, &mut layer.w_o));
            out.push((ParamGroup::AttnIdentity, &mut layer.a));
            out.push((ParamGroup::ValueIdentity, &mut layer.b));
            if let Some(w) = &mut layer.w_a {
                out.push((ParamGroup::MlpIn, w));
            }
            if let Some(w) = &mut layer.w_b {
                out.push((ParamGroup::MlpOut, w));
            }
        }
        if let Some(w) = &mut self.w_u {
            out.push((ParamGroup::Readout, w));
        }
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(ParamGroup, &T) -> U) -> Params<U> {
        Params {
            w_e: f(ParamGroup::Embedding, &self.w_e),
            p: f(ParamGroup::Position, &self.p),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_k: f(ParamGroup::Key, &l.w_k),
                    w_q: f(ParamGroup::Query, &l.w_q),
                    w_v: f(ParamGroup::Value, &l.w_v),
                    w_o: f(ParamGroup::Output, &l.w_o),
                    a: f(ParamGroup::AttnIdentity, &l.a),
                    b: f(ParamGroup::ValueIdentity, &l.b),
                    w_a: l.w_a.as_ref().map(|w| f(ParamGroup::MlpIn, w)),
                    w_b: l.w_b.as_ref().map(|w| f(ParamGroup::MlpOut, w)),
                })
                .collect(),
            w_u: self.w_u.as_ref().map(|w| f(ParamGroup::Readout, w)),
        }
    }
}

impl Parameters {
    /// Shapes implied by a configuration, all zero.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (h, dh, d) = (cfg.heads, cfg.d_head, cfg.d_emb);
        Params {
            w_e: Tensor::zeros(&[cfg.vocab, d]),
            p: Tensor::zeros(&[cfg.k, d]),
            layers: (0..cfg.depth)
                .map(|_| LayerParams {
                    w_k: Tensor::zeros(&[h, dh, d]),
                    w_q: Tensor::zeros(&[h, dh, d]),
                    w_v: Tensor::zeros(&[h, dh, d]),
                    w_o: Tensor::zeros(&[h, dh, d]),
                    a: Tensor::zeros(&[h]),
                    b: Tensor::zeros(&[h]),
                    w_a: cfg.mlp.then(|| Tensor::zeros(&[cfg.d_mlp, d])),
                    w_b: cfg.mlp.then(|| Tensor::zeros(&[cfg.d_mlp, d])),
                })
                .collect(),
            w_u: cfg.has_readout().then(|| Tensor::zeros(&[d])),
        }
    }

    /// Gaussian initialization. `Standard` draws every matrix from N(0,1);
    /// `MeanFieldCopy` uses variance 1/d_head for W_V and 1/d_emb for the
    /// rest. The identity scalars a and b start at zero under both.
    pub fn init(cfg: &ModelConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_emb as f64;
        let std_for = |g: ParamGroup| match scheme {
            InitScheme::Standard => 1.0,
            InitScheme::MeanFieldCopy => match g {
                ParamGroup::Value => 1.0 / (cfg.d_head as f64).sqrt(),
                _ => 1.0 / d.sqrt(),
            },
        };
        let root = Rng::new(seed);
        let mut params = Parameters::zeros(cfg);
        let names: Vec<String> = params.entries().into_iter().map(|(n, _, _)| n).collect();
        for (name, (g, t)) in names.iter().zip(params.values_mut()) {
            if matches!(g, ParamGroup::AttnIdentity | ParamGroup::ValueIdentity) {
                continue;
            }
            let mut rng = root.child(name);
            *t = Tensor::randn(t.shape(), std_for(g), &mut rng);
        }
        Ok(params)
    }

    /// Registers every parameter in `g`: as a leaf when `trainable` says
    /// so, as a constant otherwise.
    pub fn register(&self, g: &mut Graph, trainable: impl Fn(ParamGroup) -> bool) -> Params<NodeId> {
        self.map(|grp, t| {
            if trainable(grp) {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Parameters::zeros(cfg);
        let (a, b) = (self.entries(), want.entries());
        if a.len() != b.len() {
            return Err(Error::dim("parameters", format!("{} tensors, expected {}", a.len(), b.len())));
        }
        for ((name, _, t), (_, _, w)) in a.iter().zip(&b) {
            if t.shape() != w.shape() {
                return Err(Error::dim(
                    "parameters",
                    format!("{name} has shape {:?}, expected {:?}", t.shape(), w.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries().iter().map(|(_, _, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::regression(3, 20, 256, 16, 4, 32)
    }

    #[test]
    fn mean_field_variance() {
        let p = Parameters::init(&cfg(), 1, InitScheme::MeanFieldCopy).unwrap();
        let x = p.w_e.data();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var * 256.0 - 1.0).abs() < 0.15, "var = {var}");
        let v = p.layers[0].w_v.data();
        let var = v.iter().map(|v| v * v).sum::<f64>() / v.len() as f64;
        assert!((var * 16.0 - 1.0).abs() < 0.15, "var = {var}");
    }

    #[test]
    fn identity_scalars_start_at_zero() {
        for scheme in [InitScheme::Standard, InitScheme::MeanFieldCopy] {
            let p = Parameters::init(&cfg(), 9, scheme).unwrap();
            for l in &p.layers {
                assert!(l.a.data().iter().all(|&v| v == 0.0));
                assert!(l.b.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = Parameters::init(&cfg(), 4, InitScheme::Standard).unwrap();
        let b = Parameters::init(&cfg(), 4, InitScheme::Standard).unwrap();
        assert_eq!(a, b);
        let c = Parameters::init(&cfg(), 5, InitScheme::Standard).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn entry_order_and_groups() {
        let p = Parameters::zeros(&cfg());
        let names: Vec<String> = p.entries().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names[0], "w_e");
        assert_eq!(names[2], "layers.0.w_k");
        assert_eq!(names.last().unwrap(), "w_u");
        assert_eq!(p.entries().len(), p.map(|g, _| g).entries().len());
        assert_eq!("b".parse::<ParamGroup>().unwrap(), ParamGroup::ValueIdentity);
        assert!("Z".parse::<ParamGroup>().is_err());
    }
}
