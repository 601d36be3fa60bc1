use super::config::{BlockStyle, Factors, InitScheme, ModelConfig, Output};
use super::params::{LayerParams, ParamGroup, Parameters, Params};
use crate::error::{Error, Result};
use crate::templates::Token;
use crate::tensor::{Graph, NodeId, Tensor};

/// What the network reads.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    /// A batch of token sequences, embedded by row lookup.
    Tokens(&'a [Vec<Token>]),
    /// A `[B, k, m]` node of (one-hot) rows, embedded by matrix product.
    Rows(NodeId),
}

/// A transformer: configuration plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    pub config: ModelConfig,
    pub params: Parameters,
}

/// Nodes recorded while building a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Pre-softmax scores `[B, k, k]` of every head of the first layer.
    pub scores: Vec<NodeId>,
}

impl Transformer {
    pub fn init(config: ModelConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        let params = Parameters::init(&config, seed, scheme)?;
        Ok(Transformer { config, params })
    }

    pub fn new(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Transformer { config, params })
    }

    fn check_tokens(&self, batch: &[Vec<Token>]) -> Result<()> {
        for x in batch {
            if x.len() != self.config.k {
                return Err(Error::dim(
                    "forward",
                    format!("sequence of length {}, model expects {}", x.len(), self.config.k),
                ));
            }
            if let Some(&t) = x.iter().find(|&&t| t >= self.config.vocab) {
                return Err(Error::dim(
                    "forward",
                    format!("token {t} outside vocabulary of {}", self.config.vocab),
                ));
            }
        }
        Ok(())
    }

    /// Records the forward pass in `g`. Returns `[B]` outputs for scalar
    /// models and `[B, m]` logits otherwise.
    pub fn build(&self, g: &mut Graph, p: &Params<NodeId>, input: Input, trace: Option<&mut Trace>) -> Result<NodeId> {
        if let Input::Tokens(batch) = input {
            self.check_tokens(batch)?;
        }
        build_forward(g, &self.config, p, input, trace)
    }

    // Inference on a batch of token sequences or on one `[k, m]` matrix.
    fn run(&self, tokens: Option<&[Vec<Token>]>, rows: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.register(&mut g, |_| false);
        let out = match (tokens, rows) {
            (Some(batch), _) => self.build(&mut g, &p, Input::Tokens(batch), None)?,
            (None, Some(x)) => {
                let (k, m) = x.dims2()?;
                let node = g.constant(x.reshape(&[1, k, m])?);
                self.build(&mut g, &p, Input::Rows(node), None)?
            }
            (None, None) => return Err(Error::Contract("no input".into())),
        };
        Ok(g.value(out).clone())
    }

    /// Scalar output for one `k × m` input matrix (normally one-hot rows).
    pub fn forward_regression(&self, x: &Tensor) -> Result<f64> {
        if self.config.output != Output::Scalar {
            return Err(Error::Config("forward_regression needs a scalar-output model".into()));
        }
        let (k, m) = x.dims2()?;
        if k != self.config.k || m != self.config.vocab {
            return Err(Error::dim("forward_regression", format!("input {k}x{m}")));
        }
        let out = self.run(None, Some(x))?;
        Ok(out.data()[0])
    }

    /// Scalar outputs for a batch of token sequences.
    pub fn predict(&self, batch: &[Vec<Token>]) -> Result<Vec<f64>> {
        if self.config.output != Output::Scalar {
            return Err(Error::Config("predict needs a scalar-output model".into()));
        }
        Ok(self.run(Some(batch), None)?.into_data())
    }

    /// Vocabulary logits for one `k × m` input, unembedded through the tied
    /// embedding matrix.
    pub fn forward_symbolic(&self, x: &Tensor) -> Result<Vec<f64>> {
        if !self.config.tie_embeddings || self.config.output != Output::VocabLogits {
            return Err(Error::Config(
                "forward_symbolic needs tie_embeddings and vocabulary logits".into(),
            ));
        }
        let (k, m) = x.dims2()?;
        if k != self.config.k || m != self.config.vocab {
            return Err(Error::dim("forward_symbolic", format!("input {k}x{m}")));
        }
        Ok(self.run(None, Some(x))?.into_data())
    }

    /// Logits `[B, m]` for a batch of token sequences.
    pub fn logits(&self, batch: &[Vec<Token>]) -> Result<Tensor> {
        if self.config.output != Output::VocabLogits {
            return Err(Error::Config("logits need a vocabulary-logit model".into()));
        }
        self.run(Some(batch), None)
    }

    /// Output of a practical-style stack for one `k × m` input: `[1]` for
    /// scalar models, `[m]` logits otherwise.
    pub fn forward_practical_block_stack(&self, x: &Tensor) -> Result<Tensor> {
        if self.config.block_style != BlockStyle::Practical {
            return Err(Error::Config("model is not practical-style".into()));
        }
        let (k, m) = x.dims2()?;
        if k != self.config.k || m != self.config.vocab {
            return Err(Error::dim("forward_practical_block_stack", format!("input {k}x{m}")));
        }
        let out = self.run(None, Some(x))?;
        let n = out.len();
        out.reshape(&[n])
    }

    /// Pre-softmax scores `[k, k]` of one head in the first layer.
    pub fn attention_scores(&self, tokens: &[Token], head: usize) -> Result<Tensor> {
        if head >= self.config.heads {
            return Err(Error::dim("attention_scores", format!("head {head} of {}", self.config.heads)));
        }
        let batch = [tokens.to_vec()];
        let mut g = Graph::new();
        let p = self.params.register(&mut g, |_| false);
        let mut trace = Trace::default();
        self.build(&mut g, &p, Input::Tokens(&batch), Some(&mut trace))?;
        let k = self.config.k;
        g.value(trace.scores[head]).reshape(&[k, k])
    }

    /// Groups that receive gradients during training.
    pub fn trainable(&self, g: ParamGroup) -> bool {
        !(g == ParamGroup::Position && self.config.freeze_positions)
    }
}

fn build_forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Params<NodeId>,
    input: Input,
    mut trace: Option<&mut Trace>,
) -> Result<NodeId> {
    let f = cfg.factors();
    let k = cfg.k;
    let d = cfg.d_emb;

    let x_emb = match input {
        Input::Tokens(batch) => {
            let flat: Vec<Token> = batch.iter().flatten().copied().collect();
            let e = g.gather_rows(p.w_e, &flat)?;
            g.reshape(e, &[batch.len(), k, d])?
        }
        Input::Rows(x) => {
            let s = g.shape(x).to_vec();
            if s.len() != 3 || s[1] != k || s[2] != cfg.vocab {
                return Err(Error::dim("embedding", format!("input {s:?}")));
            }
            g.matmul(x, p.w_e)?
        }
    };
    let pos = g.scale(p.p, cfg.gamma);
    let mut z = g.add_broadcast(x_emb, pos)?;

    let (residual, norm) = match cfg.block_style {
        BlockStyle::Theory => (false, false),
        BlockStyle::Practical => (cfg.residual, cfg.layer_norm),
    };
    for (l, layer) in p.layers.iter().enumerate() {
        let h_in = if norm { g.layer_norm(z)? } else { z };
        let sink = if l == 0 { trace.as_deref_mut() } else { None };
        let att = attention(g, cfg, &f, layer, h_in, sink)?;
        z = if residual { g.add(z, att)? } else { att };
        if let (Some(w_a), Some(w_b)) = (layer.w_a, layer.w_b) {
            let h2 = if norm { g.layer_norm(z)? } else { z };
            let m = mlp(g, cfg, &f, w_a, w_b, h2)?;
            z = if residual { g.add(z, m)? } else { m };
        }
    }

    let last = g.select(z, 1, k - 1)?;
    match cfg.output {
        Output::Scalar => {
            let w_u = p
                .w_u
                .ok_or_else(|| Error::Config("scalar output needs w_u".into()))?;
            let col = g.reshape(w_u, &[d, 1])?;
            let y = g.matmul(last, col)?;
            let b = g.shape(y)[0];
            let y = g.reshape(y, &[b])?;
            Ok(g.scale(y, f.readout))
        }
        Output::VocabLogits => {
            let et = g.transpose(p.w_e)?;
            g.matmul(last, et)
        }
    }
}

// Multi-head attention over all positions: [B, k, d] -> [B, k, d].
fn attention(
    g: &mut Graph,
    cfg: &ModelConfig,
    f: &Factors,
    layer: &LayerParams<NodeId>,
    z: NodeId,
    mut trace: Option<&mut Trace>,
) -> Result<NodeId> {
    let heads = cfg.heads;
    let zt = g.transpose(z)?;

    let a_gram = if cfg.attn_identity {
        let gram = g.matmul(z, zt)?;
        let stacked = g.broadcast_axis(gram, 0, heads)?;
        let scaled = g.mul_axis(stacked, layer.a, 0)?;
        Some(g.scale(scaled, f.attn_identity))
    } else {
        None
    };
    let b_skip = if cfg.value_identity {
        let stacked = g.broadcast_axis(z, 0, heads)?;
        let scaled = g.mul_axis(stacked, layer.b, 0)?;
        Some(g.scale(scaled, f.value_identity))
    } else {
        None
    };

    let mut total: Option<NodeId> = None;
    for h in 0..heads {
        let wk = g.select(layer.w_k, 0, h)?;
        let wq = g.select(layer.w_q, 0, h)?;
        let wv = g.select(layer.w_v, 0, h)?;
        let wo = g.select(layer.w_o, 0, h)?;

        let wkt = g.transpose(wk)?;
        let wqt = g.transpose(wq)?;
        let keys = g.matmul(z, wkt)?;
        let queries = g.matmul(z, wqt)?;
        let qt = g.transpose(queries)?;
        let raw = g.matmul(keys, qt)?;
        let mut s = g.scale(raw, f.qk);
        if let Some(ag) = a_gram {
            let ah = g.select(ag, 0, h)?;
            s = g.add(s, ah)?;
        }
        let s = g.scale(s, cfg.beta);
        if let Some(t) = trace.as_deref_mut() {
            t.scores.push(s);
        }
        let attn = g.softmax(s)?;

        let wvt = g.transpose(wv)?;
        let v = g.matmul(z, wvt)?;
        let vo = g.matmul(v, wo)?;
        let mut vals = g.scale(vo, f.vo);
        if let Some(bz) = b_skip {
            let bh = g.select(bz, 0, h)?;
            vals = g.add(vals, bh)?;
        }
        let out = g.matmul(attn, vals)?;
        total = Some(match total {
            None => out,
            Some(t) => g.add(t, out)?,
        });
    }
    let total = total.expect("at least one head");
    Ok(g.scale(total, f.heads))
}

// z [.., d] -> W_B^T φ(W_A z)
fn mlp(g: &mut Graph, cfg: &ModelConfig, f: &Factors, w_a: NodeId, w_b: NodeId, z: NodeId) -> Result<NodeId> {
    let wat = g.transpose(w_a)?;
    let pre = g.matmul(z, wat)?;
    let pre = g.scale(pre, f.mlp_in);
    let act = g.activation(pre, cfg.activation);
    let out = g.matmul(act, w_b)?;
    Ok(g.scale(out, f.mlp_out))
}
