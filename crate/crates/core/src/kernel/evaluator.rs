use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::estimate::{joint_pattern, k_attn_mc, k_trans, orient, KernelEstimate};
use crate::error::{Error, Result};
use crate::templates::Token;

pub const DEFAULT_MC_SAMPLES: usize = 4096;

/// Budget for the r × r matrix `N`. Its determinant at generic
/// parameters is of order 1e-5, below the noise of the default budget.
pub const N_MATRIX_MC_SAMPLES: usize = 1 << 20;

fn default_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

/// Profile `κ` of an inner-product kernel `κ(Σ_i 1(x_i = y_i) / k)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerProfile {
    /// Degree-one arc-cosine kernel: the infinite-width ReLU layer on
    /// concatenated one-hot inputs.
    #[default]
    Relu,
    /// `exp(u)`.
    Exp,
}

impl InnerProfile {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            InnerProfile::Relu => {
                let u = u.clamp(-1.0, 1.0);
                let theta = u.acos();
                (theta.sin() + (std::f64::consts::PI - theta) * u) / std::f64::consts::PI
            }
            InnerProfile::Exp => u.exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// Random-features kernel of the depth-1 transformer with readout
    /// nonlinearity `cos(b1 t + b2)`.
    Trans {
        beta: f64,
        gamma: f64,
        b1: f64,
        b2: f64,
        #[serde(default = "default_samples")]
        n_samples: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The attention kernel alone.
    Attn {
        beta: f64,
        gamma: f64,
        #[serde(default = "default_samples")]
        n_samples: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Position-wise inner-product kernel, the MLP baseline.
    InnerProduct {
        #[serde(default)]
        profile: InnerProfile,
    },
}

impl KernelSpec {
    pub fn trans(beta: f64, gamma: f64, b1: f64, b2: f64, seed: u64) -> Self {
        KernelSpec::Trans {
            beta,
            gamma,
            b1,
            b2,
            n_samples: DEFAULT_MC_SAMPLES,
            seed,
        }
    }

    /// Same kernel with a different Monte-Carlo budget; closed forms are
    /// returned unchanged.
    pub fn with_samples(mut self, n: usize) -> Self {
        match &mut self {
            KernelSpec::Trans { n_samples, .. } | KernelSpec::Attn { n_samples, .. } => *n_samples = n,
            KernelSpec::InnerProduct { .. } => {}
        }
        self
    }

    pub fn mlp() -> Self {
        KernelSpec::InnerProduct {
            profile: InnerProfile::Relu,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            KernelSpec::InnerProduct { .. } => true,
            KernelSpec::Attn { beta, .. } | KernelSpec::Trans { beta, .. } => *beta == 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            KernelSpec::Trans { beta, gamma, b1, b2, .. } if !finite(&[*beta, *gamma, *b1, *b2]) => {
                Err(Error::Config("kernel parameters must be finite".into()))
            }
            KernelSpec::Attn { beta, gamma, .. } if !finite(&[*beta, *gamma]) => {
                Err(Error::Config("kernel parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Evaluates a kernel, caching by the joint token pattern of the oriented
/// pair. All implemented kernels are token-symmetric and every Monte-Carlo
/// entry uses the same seed, so the cache is exact.
#[derive(Debug)]
pub struct Kernel {
    spec: KernelSpec,
    cache: Mutex<HashMap<Vec<u32>, KernelEstimate>>,
}

impl Clone for Kernel {
    fn clone(&self) -> Self {
        Kernel {
            spec: self.spec.clone(),
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
        }
    }
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Kernel {
            spec,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Number of distinct pair patterns evaluated so far.
    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn eval(&self, x: &[Token], y: &[Token]) -> Result<KernelEstimate> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::dim(
                "kernel",
                format!("inputs must be nonempty and of equal length, got {} and {}", x.len(), y.len()),
            ));
        }
        let (x, y, _) = orient(x, y);
        let key = joint_pattern(x, y);
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*e);
        }
        let e = match &self.spec {
            KernelSpec::InnerProduct { profile } => {
                let m = x.iter().zip(y).filter(|(a, b)| a == b).count();
                KernelEstimate::exact(profile.apply(m as f64 / x.len() as f64))
            }
            KernelSpec::Attn {
                beta,
                gamma,
                n_samples,
                seed,
            } => k_attn_mc(x, y, *beta, *gamma, *n_samples, *seed)?,
            KernelSpec::Trans {
                beta,
                gamma,
                b1,
                b2,
                n_samples,
                seed,
            } => {
                let attn = |u: &[Token], v: &[Token]| k_attn_mc(u, v, *beta, *gamma, *n_samples, *seed);
                k_trans(&attn(x, x)?, &attn(y, y)?, &attn(x, y)?, *b1, *b2)
            }
        };
        self.cache.lock().expect("cache lock").insert(key, e);
        Ok(e)
    }

    pub fn value(&self, x: &[Token], y: &[Token]) -> Result<f64> {
        Ok(self.eval(x, y)?.value)
    }
}
