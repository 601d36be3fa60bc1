use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluator::Kernel;
use crate::error::{Error, Result};
use crate::templates::Token;
use crate::tensor::{linalg, solve_spd, Tensor};

/// Symmetric empirical kernel matrix, optionally partitioned into blocks
/// by source template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub values: Tensor,
    pub std_errors: Tensor,
    pub partition: Option<Vec<Vec<usize>>>,
}

impl GramMatrix {
    pub fn new(values: Tensor, std_errors: Tensor, partition: Option<Vec<Vec<usize>>>) -> Result<Self> {
        let (r, c) = values.dims2()?;
        if r != c || std_errors.shape() != values.shape() {
            return Err(Error::dim("gram", format!("values {:?}, errors {:?}", values.shape(), std_errors.shape())));
        }
        if let Some(p) = &partition {
            let mut all: Vec<usize> = p.iter().flatten().copied().collect();
            all.sort_unstable();
            if all != (0..r).collect::<Vec<_>>() {
                return Err(Error::Validation("partition must cover every index exactly once".into()));
            }
        }
        Ok(GramMatrix {
            values,
            std_errors,
            partition,
        })
    }

    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values.data()[i * self.n() + j]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                m = m.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        m
    }

    /// Smallest eigenvalue of the symmetrized matrix plus `shift`.
    pub fn min_eigenvalue(&self, shift: f64) -> Result<f64> {
        let (vals, _) = linalg::symmetric_eigen(&self.values)?;
        Ok(vals[0] + shift)
    }

    pub fn condition_number(&self) -> Result<f64> {
        linalg::condition_number(&self.values)
    }

    pub fn to_csv(&self, comment: Option<&str>) -> String {
        matrix_csv(&self.values, comment)
    }
}

/// Dense CSV with a `c0,c1,..` header.
pub fn matrix_csv(m: &Tensor, comment: Option<&str>) -> String {
    let (r, c) = m.dims2().expect("matrix");
    let mut out = String::new();
    if let Some(text) = comment {
        for line in text.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    let header: Vec<String> = (0..c).map(|j| format!("c{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..r {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Kernel matrix of `xs` against itself. Only the upper triangle is
/// evaluated; the lower one is mirrored.
pub fn gram(kernel: &Kernel, xs: &[Vec<Token>], partition: Option<Vec<Vec<usize>>>) -> Result<GramMatrix> {
    let n = xs.len();
    let mut v = Tensor::zeros(&[n, n]);
    let mut s = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let e = kernel.eval(&xs[i], &xs[j])?;
            for (a, b) in [(i, j), (j, i)] {
                v.set(&[a, b], e.value);
                s.set(&[a, b], e.std_error);
            }
        }
    }
    GramMatrix::new(v, s, partition)
}

/// `[K(x_1, x), .., K(x_n, x)]`.
pub fn cross_vector(kernel: &Kernel, xs: &[Vec<Token>], x: &[Token]) -> Result<Vec<f64>> {
    xs.iter().map(|xi| kernel.value(xi, x)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub weights: Vec<f64>,
    pub lambda: f64,
}

/// `w = (K̂ + λI)⁻¹ y`.
pub fn krr_fit(gram: &GramMatrix, labels: &[f64], lambda: f64) -> Result<KrrModel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Contract(format!("ridge λ must be positive and finite, got {lambda}")));
    }
    let n = gram.n();
    if labels.len() != n {
        return Err(Error::dim("krr_fit", format!("{n} samples, {} labels", labels.len())));
    }
    let mut a = gram.values.clone();
    for i in 0..n {
        a.set(&[i, i], a.at(&[i, i]) + lambda);
    }
    let w = solve_spd(&a, &Tensor::vector(labels.to_vec()))?;
    Ok(KrrModel {
        weights: w.into_data(),
        lambda,
    })
}

/// `f̂(x) = wᵀ k(x)`.
pub fn krr_predict(weights: &[f64], k_vector: &[f64]) -> Result<f64> {
    if weights.len() != k_vector.len() {
        return Err(Error::dim(
            "krr_predict",
            format!("{} weights, {} kernel values", weights.len(), k_vector.len()),
        ));
    }
    Ok(crate::tensor::dot(weights, k_vector))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;

    fn identity_gram(n: usize) -> GramMatrix {
        GramMatrix::new(Tensor::eye(n), Tensor::zeros(&[n, n]), None).unwrap()
    }

    #[test]
    fn identity_ridge_halves_labels() {
        let y = [1.0, -2.0, 0.5];
        let m = krr_fit(&identity_gram(3), &y, 1.0).unwrap();
        for (i, yi) in y.iter().enumerate() {
            let mut e = vec![0.0; 3];
            e[i] = 1.0;
            assert!((krr_predict(&m.weights, &e).unwrap() - yi / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_ridge_predicts_zero() {
        let k = Kernel::new(KernelSpec::mlp()).unwrap();
        let xs: Vec<Vec<Token>> = (0..10).map(|i| vec![i, (i * 3) % 7]).collect();
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let g = gram(&k, &xs, None).unwrap();
        let m = krr_fit(&g, &y, 1e9).unwrap();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for x in &xs {
            let f = krr_predict(&m.weights, &cross_vector(&k, &xs, x).unwrap()).unwrap();
            assert!(f.abs() < 1e-6 * norm);
        }
    }

    #[test]
    fn nonpositive_ridge_is_contract_error() {
        for l in [0.0, -1.0, f64::NAN] {
            assert!(matches!(krr_fit(&identity_gram(2), &[1.0, 1.0], l), Err(Error::Contract(_))));
        }
    }

    #[test]
    fn gram_is_symmetric_and_shift_psd() {
        let k = Kernel::new(KernelSpec::trans(0.8, 0.6, 1.0, 0.3, 4)).unwrap();
        let xs: Vec<Vec<Token>> = (0..12).map(|i| vec![i % 4, (i * 5) % 6, 99]).collect();
        let g = gram(&k, &xs, None).unwrap();
        assert!(g.max_asymmetry() <= 1e-9);
        assert!(g.min_eigenvalue(0.5).unwrap() >= 0.5 - 1e-9 - 1e-2);
        let csv = g.to_csv(Some("h"));
        assert_eq!(csv.lines().count(), 14);
    }

    #[test]
    fn partition_must_cover() {
        let r = GramMatrix::new(Tensor::eye(3), Tensor::zeros(&[3, 3]), Some(vec![vec![0], vec![2]]));
        assert!(r.is_err());
    }
}
