use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    /// One real number read out by `w_U` at the final position.
    Scalar,
    /// Logits over the vocabulary through the (tied) embedding matrix.
    VocabLogits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStyle {
    /// No skip connections, no normalization.
    Theory,
    /// Pre-normalization residual blocks.
    Practical,
}

/// Forward-pass rescaling of each product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Every factor is 1.
    Unit,
    /// Factors that keep activations of order one under unit-variance
    /// initialization.
    WidthNormalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Standard,
    MeanFieldCopy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub vocab: usize,
    pub d_emb: usize,
    pub d_head: usize,
    #[serde(default = "default_d_mlp")]
    pub d_mlp: usize,
    pub heads: usize,
    #[serde(default = "one")]
    pub depth: usize,
    #[serde(default = "unit")]
    pub beta: f64,
    #[serde(default = "unit")]
    pub gamma: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub attn_identity: bool,
    #[serde(default)]
    pub value_identity: bool,
    #[serde(default)]
    pub tie_embeddings: bool,
    #[serde(default = "default_output")]
    pub output: Output,
    #[serde(default = "default_style")]
    pub block_style: BlockStyle,
    #[serde(default = "default_scaling")]
    pub scaling: Scaling,
    /// Include the MLP sublayer.
    #[serde(default = "yes")]
    pub mlp: bool,
    /// Practical style only.
    #[serde(default = "yes")]
    pub residual: bool,
    /// Practical style only.
    #[serde(default = "yes")]
    pub layer_norm: bool,
    #[serde(default)]
    pub freeze_positions: bool,
}

fn default_d_mlp() -> usize {
    256
}
fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_output() -> Output {
    Output::Scalar
}
fn default_style() -> BlockStyle {
    BlockStyle::Theory
}
fn default_scaling() -> Scaling {
    Scaling::WidthNormalized
}

/// Multipliers applied inside the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factors {
    pub qk: f64,
    pub attn_identity: f64,
    pub vo: f64,
    pub value_identity: f64,
    pub heads: f64,
    pub mlp_in: f64,
    pub mlp_out: f64,
    pub readout: f64,
}

impl ModelConfig {
    /// Theory-style single-layer regression model with width-normalized
    /// forward pass.
    pub fn regression(k: usize, vocab: usize, d_emb: usize, d_head: usize, heads: usize, d_mlp: usize) -> Self {
        ModelConfig {
            k,
            vocab,
            d_emb,
            d_head,
            d_mlp,
            heads,
            depth: 1,
            beta: 1.0,
            gamma: 1.0,
            activation: Activation::Relu,
            attn_identity: false,
            value_identity: false,
            tie_embeddings: false,
            output: Output::Scalar,
            block_style: BlockStyle::Theory,
            scaling: Scaling::WidthNormalized,
            mlp: true,
            residual: true,
            layer_norm: true,
            freeze_positions: false,
        }
    }

    /// Attention-only model with tied embeddings producing vocabulary
    /// logits, without any forward rescaling.
    pub fn symbolic(k: usize, vocab: usize, d_emb: usize, d_head: usize, heads: usize) -> Self {
        ModelConfig {
            tie_embeddings: true,
            output: Output::VocabLogits,
            scaling: Scaling::Unit,
            mlp: false,
            d_mlp: 1,
            gamma: 0.0,
            ..ModelConfig::regression(k, vocab, d_emb, d_head, heads, 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("k", self.k),
            ("vocab", self.vocab),
            ("d_emb", self.d_emb),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("heads", self.heads),
            ("depth", self.depth),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if let Activation::Cosine { b1, b2 } = self.activation {
            if !b1.is_finite() || !b2.is_finite() {
                return Err(Error::Config("cosine activation parameters must be finite".into()));
            }
        }
        if self.output == Output::VocabLogits && !self.tie_embeddings {
            return Err(Error::Config("vocabulary logits need tie_embeddings".into()));
        }
        Ok(())
    }

    pub fn factors(&self) -> Factors {
        match self.scaling {
            Scaling::Unit => Factors {
                qk: 1.0,
                attn_identity: 1.0,
                vo: 1.0,
                value_identity: 1.0,
                heads: 1.0,
                mlp_in: 1.0,
                mlp_out: 1.0,
                readout: 1.0,
            },
            Scaling::WidthNormalized => {
                let d = self.d_emb as f64;
                let dh = self.d_head as f64;
                Factors {
                    qk: 1.0 / (d * dh.sqrt()),
                    attn_identity: 1.0 / dh.sqrt(),
                    vo: 1.0 / (dh * d).sqrt(),
                    value_identity: 1.0,
                    heads: 1.0 / (self.heads as f64).sqrt(),
                    mlp_in: 1.0 / d.sqrt(),
                    mlp_out: 1.0 / (self.d_mlp as f64).sqrt(),
                    readout: 1.0 / d.sqrt(),
                }
            }
        }
    }

    pub fn has_readout(&self) -> bool {
        self.output == Output::Scalar
    }
}

/// Multilayer perceptron on concatenated one-hot encodings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub k: usize,
    pub vocab: usize,
    pub width: usize,
    /// Number of hidden layers, at least 1.
    #[serde(default = "one")]
    pub depth: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.vocab == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::Config("MLP extents must all be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"k":3,"vocab":10,"d_emb":8,"d_head":4,"heads":2}"#).unwrap();
        assert_eq!(c.depth, 1);
        assert_eq!(c.block_style, BlockStyle::Theory);
        assert!(c.mlp && !c.attn_identity);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_and_bad_values_rejected() {
        assert!(serde_json::from_str::<ModelConfig>(
            r#"{"k":3,"vocab":10,"d_emb":8,"d_head":4,"heads":2,"dropout":0.1}"#
        )
        .is_err());
        let mut c = ModelConfig::regression(3, 10, 8, 4, 2, 16);
        c.beta = f64::NAN;
        assert!(c.validate().is_err());
        c.beta = 1.0;
        c.heads = 0;
        assert!(c.validate().is_err());
        let mut s = ModelConfig::symbolic(1, 10, 8, 8, 2);
        s.validate().unwrap();
        s.tie_embeddings = false;
        assert!(s.validate().is_err());
    }

    #[test]
    fn unit_factors_are_one() {
        let f = ModelConfig::symbolic(1, 5, 16, 16, 4).factors();
        assert_eq!(f.qk * f.vo * f.heads * f.readout * f.mlp_in * f.mlp_out, 1.0);
    }
}
