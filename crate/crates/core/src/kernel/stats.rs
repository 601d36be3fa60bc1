use serde::{Deserialize, Serialize};

use super::gram::GramMatrix;
use super::nmatrix::NMatrix;
use crate::error::{Error, Result};
use crate::tensor::{linalg, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStat {
    pub row_template: usize,
    pub col_template: usize,
    pub entries: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    /// Off-diagonal entries only: the diagonal holds `K(x, x)`.
    pub blocks: Vec<BlockStat>,
    /// Fraction of off-diagonal entries within three combined standard
    /// errors of their block's `N` entry. `None` without an `N`.
    pub within_3se: Option<f64>,
    /// Mean squared cosine of the principal angles between the top-`r`
    /// eigenspace (by magnitude) and `span{1_{ℐ_j}}`; 1 means aligned.
    pub alignment: f64,
}

pub fn block_structure_stats(gram: &GramMatrix, n_matrix: Option<&NMatrix>) -> Result<BlockReport> {
    let parts = gram
        .partition
        .as_ref()
        .ok_or_else(|| Error::Validation("block statistics need a partition".into()))?;
    let r = parts.len();
    if let Some(nm) = n_matrix {
        if nm.r() != r {
            return Err(Error::dim("block_structure_stats", format!("{r} blocks, N is {}x{}", nm.r(), nm.r())));
        }
    }
    let mut blocks = Vec::with_capacity(r * r);
    let (mut close, mut total) = (0usize, 0usize);
    for (j, bj) in parts.iter().enumerate() {
        for (jp, bjp) in parts.iter().enumerate() {
            let mut vals = Vec::new();
            for &i in bj {
                for &ip in bjp {
                    if i == ip {
                        continue;
                    }
                    let v = gram.at(i, ip);
                    vals.push(v);
                    if let Some(nm) = n_matrix {
                        let se = gram.std_errors.at(&[i, ip]).hypot(nm.std_errors.at(&[j, jp]));
                        total += 1;
                        if (v - nm.at(j, jp)).abs() <= 3.0 * se {
                            close += 1;
                        }
                    }
                }
            }
            let m = vals.len();
            let mean = if m == 0 { f64::NAN } else { vals.iter().sum::<f64>() / m as f64 };
            let sd = if m == 0 {
                f64::NAN
            } else {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64).sqrt()
            };
            blocks.push(BlockStat {
                row_template: j,
                col_template: jp,
                entries: m,
                mean,
                sd,
            });
        }
    }
    let within_3se = n_matrix.map(|_| if total == 0 { f64::NAN } else { close as f64 / total as f64 });
    Ok(BlockReport {
        blocks,
        within_3se,
        alignment: alignment(&gram.values, parts)?,
    })
}

/// `‖U_rᵀ Q‖_F² / r` with `U_r` the top-`r` eigenvectors by |eigenvalue|
/// and `Q` the normalized block indicators (nonempty blocks only).
pub fn alignment(values: &Tensor, parts: &[Vec<usize>]) -> Result<f64> {
    let n = values.shape()[0];
    let nonempty: Vec<&Vec<usize>> = parts.iter().filter(|b| !b.is_empty()).collect();
    let r = nonempty.len();
    if r == 0 || r > n {
        return Err(Error::Validation("alignment needs between 1 and n nonempty blocks".into()));
    }
    let (vals, vecs) = linalg::symmetric_eigen(values)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    let mut fro = 0.0;
    for &c in &order[..r] {
        for b in &nonempty {
            let s: f64 = b.iter().map(|&i| vecs.at(&[i, c])).sum::<f64>() / (b.len() as f64).sqrt();
            fro += s * s;
        }
    }
    Ok(fro / r as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_matrix(parts: &[Vec<usize>], n: &[[f64; 2]; 2], noise: f64) -> GramMatrix {
        let size = parts.iter().map(Vec::len).sum();
        let mut src = vec![0; size];
        for (j, b) in parts.iter().enumerate() {
            for &i in b {
                src[i] = j;
            }
        }
        let mut v = Tensor::zeros(&[size, size]);
        for i in 0..size {
            for k in 0..size {
                let jitter = if i == k { 0.0 } else { noise * (((i * 31 + k * 31) % 7) as f64 - 3.0) };
                v.set(&[i, k], n[src[i]][src[k]] + jitter);
            }
        }
        GramMatrix::new(v, Tensor::zeros(&[size, size]), Some(parts.to_vec())).unwrap()
    }

    #[test]
    fn exact_blocks() {
        let parts = vec![vec![0, 2, 4], vec![1, 3]];
        let g = block_matrix(&parts, &[[2.0, 0.5], [0.5, 1.0]], 0.0);
        let r = block_structure_stats(&g, None).unwrap();
        assert!(r.blocks.iter().all(|b| b.sd == 0.0));
        assert!((r.alignment - 1.0).abs() < 1e-12);
        assert_eq!(r.blocks[1].entries, 6);
        assert_eq!(r.blocks[0].entries, 6);
    }

    #[test]
    fn noise_lowers_alignment() {
        let parts = vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]];
        let clean = block_matrix(&parts, &[[1.0, 0.2], [0.2, 1.0]], 0.0);
        let noisy = block_matrix(&parts, &[[1.0, 0.2], [0.2, 1.0]], 0.2);
        let a = block_structure_stats(&clean, None).unwrap().alignment;
        let b = block_structure_stats(&noisy, None).unwrap().alignment;
        assert!(b < a, "{b} vs {a}");
    }
}
