use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templates::Token;
use crate::tensor::Rng;

/// A kernel value with its Monte-Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Zero for closed forms.
    pub n_samples: usize,
    /// Samples were drawn as antithetic pairs `(ζ, p)`, `(−ζ, −p)`; the
    /// standard error is taken over pair means.
    pub antithetic: bool,
}

impl KernelEstimate {
    pub fn exact(value: f64) -> Self {
        KernelEstimate {
            value,
            std_error: 0.0,
            n_samples: 0,
            antithetic: false,
        }
    }
}

/// Relabels the tokens of `x ++ y` as `0, 1, ..` in order of first
/// appearance. Two pairs related by a vocabulary permutation share a pattern.
pub fn joint_pattern(x: &[Token], y: &[Token]) -> Vec<u32> {
    let mut seen: Vec<Token> = Vec::with_capacity(x.len() + y.len());
    x.iter()
        .chain(y)
        .map(|t| match seen.iter().position(|s| s == t) {
            Some(i) => i as u32,
            None => {
                seen.push(*t);
                (seen.len() - 1) as u32
            }
        })
        .collect()
}

/// Orders a pair so that the kernel sees the same arguments for `(x, y)` and
/// `(y, x)`. Returns whether the pair was swapped.
pub(crate) fn orient<'a>(x: &'a [Token], y: &'a [Token]) -> (&'a [Token], &'a [Token], bool) {
    if joint_pattern(y, x) < joint_pattern(x, y) {
        (y, x, true)
    } else {
        (x, y, false)
    }
}

fn check_pair(x: &[Token], y: &[Token]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::dim(
            "k_attn",
            format!("inputs must be nonempty and of equal length, got {} and {}", x.len(), y.len()),
        ));
    }
    Ok(x.len())
}

/// `K_attn` at `β = 0`: uniform attention gives `(#{i,j: x_i = y_j} + γ²k)/k²`.
pub fn k_attn_uniform(x: &[Token], y: &[Token], gamma: f64) -> Result<f64> {
    let k = check_pair(x, y)?;
    let matches = x.iter().map(|a| y.iter().filter(|b| *b == a).count()).sum::<usize>() as f64;
    let kf = k as f64;
    Ok((matches + gamma * gamma * kf) / (kf * kf))
}

/// Monte-Carlo estimate of
/// `E[softmax(β m(X))ᵀ (XYᵀ + γ²I) softmax(β m(Y))]` with
/// `m(X)_i = ζ_{x_i} + γ p_i`, `m(Y)_i = ζ_{y_i} + γ p_i`, `ζ, p` standard
/// normal. At `β = 0` the exact value is returned.
pub fn k_attn_mc(x: &[Token], y: &[Token], beta: f64, gamma: f64, n_samples: usize, seed: u64) -> Result<KernelEstimate> {
    if beta == 0.0 {
        check_pair(x, y)?;
        return Ok(KernelEstimate::exact(k_attn_uniform(x, y, gamma)?));
    }
    k_attn_sampled(x, y, beta, gamma, n_samples, seed)
}

/// [`k_attn_mc`] without the `β = 0` shortcut.
///
/// Token slots are numbered by first appearance in the oriented pair and
/// every pattern consumes the same Gaussian stream, so the estimate is
/// exactly invariant under vocabulary permutations and argument swaps.
pub fn k_attn_sampled(
    x: &[Token],
    y: &[Token],
    beta: f64,
    gamma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<KernelEstimate> {
    let k = check_pair(x, y)?;
    if n_samples < 4 {
        return Err(Error::Config(format!("need at least 4 Monte-Carlo samples, got {n_samples}")));
    }
    if !beta.is_finite() || !gamma.is_finite() {
        return Err(Error::Config("β and γ must be finite".into()));
    }
    let (x, y, _) = orient(x, y);
    let pat = joint_pattern(x, y);
    let (px, py) = pat.split_at(k);
    let mut cross = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            cross[i * k + j] = if px[i] == py[j] { 1.0 } else { 0.0 } + if i == j { gamma * gamma } else { 0.0 };
        }
    }

    let pairs = n_samples.div_ceil(2);
    let mut rng = Rng::new(seed);
    let (mut zeta, mut p) = (vec![0.0; 2 * k], vec![0.0; k]);
    let (mut sx, mut sy) = (vec![0.0; k], vec![0.0; k]);
    let eval = |sign: f64, zeta: &[f64], p: &[f64], sx: &mut [f64], sy: &mut [f64]| {
        for i in 0..k {
            sx[i] = sign * beta * (zeta[px[i] as usize] + gamma * p[i]);
            sy[i] = sign * beta * (zeta[py[i] as usize] + gamma * p[i]);
        }
        softmax(sx);
        softmax(sy);
        let mut v = 0.0;
        for i in 0..k {
            let row = &cross[i * k..(i + 1) * k];
            v += sx[i] * row.iter().zip(sy.iter()).map(|(c, s)| c * s).sum::<f64>();
        }
        v
    };
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..pairs {
        zeta.iter_mut().for_each(|z| *z = rng.normal());
        p.iter_mut().for_each(|z| *z = rng.normal());
        let a = eval(1.0, &zeta, &p, &mut sx, &mut sy);
        let b = eval(-1.0, &zeta, &p, &mut sx, &mut sy);
        let m = 0.5 * (a + b);
        sum += m;
        sumsq += m * m;
    }
    let np = pairs as f64;
    let mean = sum / np;
    let var = ((sumsq - np * mean * mean) / (np - 1.0)).max(0.0);
    Ok(KernelEstimate {
        value: mean,
        std_error: (var / np).sqrt(),
        n_samples: 2 * pairs,
        antithetic: true,
    })
}

fn softmax(v: &mut [f64]) {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for a in v.iter_mut() {
        *a = (*a - mx).exp();
        s += *a;
    }
    v.iter_mut().for_each(|a| *a /= s);
}

/// Cosine lift `E[cos(b1 u + b2) cos(b1 v + b2)]` for centered Gaussians
/// with `Var u = a`, `Var v = b`, `Cov(u, v) = ρ`.
pub fn cosine_lift(a: f64, b: f64, rho: f64, b1: f64, b2: f64) -> f64 {
    let s = b1 * b1;
    0.5 * (-0.5 * s * (a + b)).exp() * ((-s * rho).exp() * (2.0 * b2).cos() + (s * rho).exp())
}

/// `K_trans` from the three attention estimates, with first-order error
/// propagation (the three errors are treated as independent).
pub fn k_trans(xx: &KernelEstimate, yy: &KernelEstimate, xy: &KernelEstimate, b1: f64, b2: f64) -> KernelEstimate {
    let (a, b, rho) = (xx.value, yy.value, xy.value);
    let s = b1 * b1;
    let value = cosine_lift(a, b, rho, b1, b2);
    let d_ab = -0.5 * s * value;
    let d_rho = 0.5 * (-0.5 * s * (a + b)).exp() * s * ((s * rho).exp() - (-s * rho).exp() * (2.0 * b2).cos());
    let var = (d_ab * xx.std_error).powi(2) + (d_ab * yy.std_error).powi(2) + (d_rho * xy.std_error).powi(2);
    KernelEstimate {
        value,
        std_error: var.sqrt(),
        n_samples: xx.n_samples.max(yy.n_samples).max(xy.n_samples),
        antithetic: xx.antithetic || yy.antithetic || xy.antithetic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(k_attn_mc(&[1, 2], &[1, 2], 0.0, 0.0, 0, 0).unwrap().value, 0.5);
        let e = k_attn_mc(&[1, 2], &[3, 4], 0.0, 1.0, 0, 0).unwrap();
        assert_eq!((e.value, e.std_error), (0.5, 0.0));
    }

    #[test]
    fn sampled_path_has_zero_variance_at_beta_zero() {
        for (x, y, g) in [(vec![1, 1, 2], vec![2, 3, 1], 0.7), (vec![5, 6], vec![5, 5], 0.0)] {
            let e = k_attn_sampled(&x, &y, 0.0, g, 256, 9).unwrap();
            let exact = k_attn_uniform(&x, &y, g).unwrap();
            assert!((e.value - exact).abs() < 1e-14);
            assert!(e.std_error < 1e-14);
        }
    }

    #[test]
    fn relabel_and_swap_are_exact() {
        let a = k_attn_sampled(&[3, 3, 9], &[4, 7, 9], 0.8, 0.5, 512, 1).unwrap();
        let b = k_attn_sampled(&[11, 11, 0], &[2, 5, 0], 0.8, 0.5, 512, 1).unwrap();
        let c = k_attn_sampled(&[2, 5, 0], &[11, 11, 0], 0.8, 0.5, 512, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn large_beta_picks_the_max() {
        // one token per side, no positional noise: the softmax is a point mass
        let e = k_attn_sampled(&[1], &[1], 5.0, 0.0, 64, 2).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lift_special_cases() {
        let c = cosine_lift(0.7, 0.4, 0.2, 0.0, 0.3);
        assert!((c - 0.3f64.cos().powi(2)).abs() < 1e-15);
        let a = 0.6;
        let same = cosine_lift(a, a, a, 1.3, 0.2);
        let want = 0.5 * ((-2.0 * 1.69 * a).exp() * 0.4f64.cos() + 1.0);
        assert!((same - want).abs() < 1e-14);
    }

    #[test]
    fn propagated_error_matches_finite_difference() {
        let e = |v: f64, s: f64| KernelEstimate { value: v, std_error: s, n_samples: 10, antithetic: true };
        let (a, b, r) = (0.5, 0.4, 0.3);
        let k = k_trans(&e(a, 0.0), &e(b, 0.0), &e(r, 1.0), 1.1, 0.3);
        let h = 1e-6;
        let fd = (cosine_lift(a, b, r + h, 1.1, 0.3) - cosine_lift(a, b, r - h, 1.1, 0.3)) / (2.0 * h);
        assert!((k.std_error - fd.abs()).abs() < 1e-8);
        let k = k_trans(&e(a, 1.0), &e(b, 0.0), &e(r, 0.0), 1.1, 0.3);
        let fd = (cosine_lift(a + h, b, r, 1.1, 0.3) - cosine_lift(a - h, b, r, 1.1, 0.3)) / (2.0 * h);
        assert!((k.std_error - fd.abs()).abs() < 1e-8);
    }
}
