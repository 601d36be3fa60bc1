use super::config::MlpConfig;
use crate::error::{Error, Result};
use crate::templates::Token;
use crate::tensor::{Graph, NodeId, Rng, Tensor};

/// MLP weights. The first layer is stored transposed, as `[k·m, width]`:
/// row `i·m + t` is the column of W₁ that reads token `t` at position `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub w1: T,
    /// `[width, width]` each
    pub hidden: Vec<T>,
    /// `[width]`
    pub w: T,
}

impl<T> MlpParams<T> {
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = vec![("w1".to_string(), &self.w1)];
        for (i, h) in self.hidden.iter().enumerate() {
            out.push((format!("w{}", i + 2), h));
        }
        out.push(("w".to_string(), &self.w));
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.w1];
        out.extend(self.hidden.iter_mut());
        out.push(&mut self.w);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MlpParams<U> {
        MlpParams {
            w1: f(&self.w1),
            hidden: self.hidden.iter().map(&mut f).collect(),
            w: f(&self.w),
        }
    }
}

/// `f(x) = wᵀ z_L / √width` with `z₁ = φ(W₁ z₀ / √k)`,
/// `z_ℓ = φ(W_ℓ z_{ℓ−1} / √width)` and `z₀` the concatenated one-hot
/// encodings of the tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub params: MlpParams<Tensor>,
}

impl Mlp {
    /// All weights i.i.d. N(0, 1).
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(seed);
        let (km, h) = (config.k * config.vocab, config.width);
        let params = MlpParams {
            w1: Tensor::randn(&[km, h], 1.0, &mut root.child("w1")),
            hidden: (0..config.depth - 1)
                .map(|i| Tensor::randn(&[h, h], 1.0, &mut root.child_indexed("hidden", i as u64)))
                .collect(),
            w: Tensor::randn(&[h], 1.0, &mut root.child("w")),
        };
        Ok(Mlp { config, params })
    }

    fn check(&self, batch: &[Vec<Token>]) -> Result<()> {
        for x in batch {
            if x.len() != self.config.k || x.iter().any(|&t| t >= self.config.vocab) {
                return Err(Error::dim(
                    "forward_mlp",
                    format!("sequence {x:?} for k = {}, m = {}", self.config.k, self.config.vocab),
                ));
            }
        }
        Ok(())
    }

    /// Records the forward pass; returns `[B]`.
    pub fn build(&self, g: &mut Graph, p: &MlpParams<NodeId>, batch: &[Vec<Token>]) -> Result<NodeId> {
        self.check(batch)?;
        let (k, m, h) = (self.config.k, self.config.vocab, self.config.width);
        let rows: Vec<usize> = batch
            .iter()
            .flat_map(|x| x.iter().enumerate().map(move |(i, &t)| i * m + t))
            .collect();
        let picked = g.gather_rows(p.w1, &rows)?;
        let picked = g.reshape(picked, &[batch.len(), k, h])?;
        let pre = g.sum_axis(picked, 1)?;
        let pre = g.scale(pre, 1.0 / (k as f64).sqrt());
        let mut z = g.activation(pre, self.config.activation);
        let inv = 1.0 / (h as f64).sqrt();
        for &w in &p.hidden {
            let wt = g.transpose(w)?;
            let pre = g.matmul(z, wt)?;
            let pre = g.scale(pre, inv);
            z = g.activation(pre, self.config.activation);
        }
        let col = g.reshape(p.w, &[h, 1])?;
        let y = g.matmul(z, col)?;
        let y = g.reshape(y, &[batch.len()])?;
        Ok(g.scale(y, inv))
    }

    pub fn register(&self, g: &mut Graph) -> MlpParams<NodeId> {
        self.params.map(|t| g.leaf(t.clone()))
    }

    pub fn forward_mlp(&self, batch: &[Vec<Token>]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.map(|t| g.constant(t.clone()));
        let y = self.build(&mut g, &p, batch)?;
        Ok(g.value(y).data().to_vec())
    }

    /// The network whose first layer reads `perms[i][t]` wherever the
    /// original reads token `t` at position `i`. For any `x`,
    /// `coupled(perms).f(y) == f(x)` with `y_i = perms[i][x_i]`.
    pub fn coupled(&self, perms: &[Vec<Token>]) -> Result<Mlp> {
        let (k, m, h) = (self.config.k, self.config.vocab, self.config.width);
        if perms.len() != k {
            return Err(Error::Contract(format!("{} position permutations for k = {k}", perms.len())));
        }
        for perm in perms {
            let mut seen = vec![false; m];
            if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Contract("coupling needs permutations of the vocabulary".into()));
            }
        }
        let src = self.params.w1.data();
        let mut dst = vec![0.0; src.len()];
        for (i, perm) in perms.iter().enumerate() {
            for (t, &pt) in perm.iter().enumerate() {
                let from = (i * m + t) * h;
                let to = (i * m + pt) * h;
                dst[to..to + h].copy_from_slice(&src[from..from + h]);
            }
        }
        let mut out = self.clone();
        out.params.w1 = Tensor::new(vec![k * m, h], dst)?;
        Ok(out)
    }
}

/// Per-position transpositions sending `x1` to `x2` and fixing every other
/// token.
pub fn pair_coupling(x1: &[Token], x2: &[Token], m: usize) -> Result<Vec<Vec<Token>>> {
    if x1.len() != x2.len() || x1.iter().chain(x2).any(|&t| t >= m) {
        return Err(Error::Contract("coupled strings must have equal length and lie in the vocabulary".into()));
    }
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(&a, &b)| {
            let mut p: Vec<Token> = (0..m).collect();
            p.swap(a, b);
            p
        })
        .collect())
}
