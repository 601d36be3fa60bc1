use serde::{Deserialize, Serialize};

use super::evaluator::Kernel;
use super::gram::GramMatrix;
use super::nmatrix::{random_substitution, witness_pool, NMatrix};
use crate::error::{Error, Result};
use crate::templates::{substitute, Dataset, TemplateTask, Token};
use crate::tensor::{linalg, Rng, Tensor};

/// Block-constant Gram matrix: entry `(i, i')` is `N_{j,j'}` for samples
/// `i` from template `j` and `i'` from template `j'`, diagonal included.
pub fn idealized_gram(n_matrix: &NMatrix, dataset: &Dataset) -> Result<GramMatrix> {
    let r = n_matrix.r();
    if let Some(s) = dataset.samples.iter().find(|s| s.template >= r) {
        return Err(Error::Validation(format!("sample from template {} but N is {r}x{r}", s.template)));
    }
    let src: Vec<usize> = dataset.samples.iter().map(|s| s.template).collect();
    let n = src.len();
    let mut v = Tensor::zeros(&[n, n]);
    let mut e = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for ip in 0..n {
            v.set(&[i, ip], n_matrix.at(src[i], src[ip]));
            e.set(&[i, ip], n_matrix.std_errors.at(&[src[i], src[ip]]));
        }
    }
    GramMatrix::new(v, e, Some(dataset.partition(r)))
}

/// `v^ideal_i(x) = K(sub(z_j, s), x)` for samples `i` from template `j`,
/// with one fresh `s` per template avoiding the regular tokens and `x`.
pub fn idealized_vector(
    task: &TemplateTask,
    kernel: &Kernel,
    dataset: &Dataset,
    x: &[Token],
    seed: u64,
) -> Result<Vec<f64>> {
    let pool = witness_pool(task, x, task.max_wildcards())?;
    let mut rng = Rng::new(seed);
    let per_template: Vec<f64> = task
        .templates
        .iter()
        .map(|z| {
            let ws: Vec<usize> = z.wildcards().into_iter().collect();
            let s = random_substitution(&ws, &pool, &mut rng);
            let (xz, _) = substitute(z, &s)?;
            kernel.value(&xz, x)
        })
        .collect::<Result<_>>()?;
    dataset
        .samples
        .iter()
        .map(|s| {
            per_template
                .get(s.template)
                .copied()
                .ok_or_else(|| Error::Validation(format!("sample from unknown template {}", s.template)))
        })
        .collect()
}

/// `(K̂^ideal + λI)⁻¹ v`. The block-constant matrix may be indefinite, so
/// this is a general solve; for `λ` below `τ` the shifted matrix is
/// nonsingular.
pub fn idealized_coefficients(gram: &GramMatrix, v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Contract(format!("ridge λ must be positive, got {lambda}")));
    }
    let n = gram.n();
    if v.len() != n {
        return Err(Error::dim("idealized", format!("{n} samples, vector of {}", v.len())));
    }
    let mut a = gram.values.clone();
    for i in 0..n {
        a.set(&[i, i], a.at(&[i, i]) + lambda);
    }
    Ok(linalg::solve(&a, &Tensor::vector(v.to_vec()))?.into_data())
}

/// `f̂^ideal(x) = yᵀ (K̂^ideal + λI)⁻¹ v^ideal(x)`.
pub fn idealized_predict(gram: &GramMatrix, labels: &[f64], v: &[f64], lambda: f64) -> Result<f64> {
    if labels.len() != gram.n() {
        return Err(Error::dim("idealized_predict", format!("{} samples, {} labels", gram.n(), labels.len())));
    }
    Ok(crate::tensor::dot(labels, &idealized_coefficients(gram, v, lambda)?))
}

/// `τ = min_j |ℐ_j| / ‖N⁻¹‖`.
pub fn tau(n_matrix: &NMatrix, partition: &[Vec<usize>]) -> Result<f64> {
    let smallest = partition.iter().map(Vec::len).min().unwrap_or(0);
    Ok(smallest as f64 / n_matrix.inverse_norm()?)
}

/// Both inequalities for a string matching template `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowInverseCheck {
    pub template: usize,
    pub tau: f64,
    pub lambda: f64,
    /// `‖(K̂^ideal + λI)⁻¹ v‖`
    pub norm: f64,
    /// `|ℐ_a|^{-1/2} · τ/(τ−λ)`
    pub norm_bound: f64,
    /// `‖1_{ℐ_a}/|ℐ_a| − (K̂^ideal + λI)⁻¹ v‖`
    pub deviation: f64,
    /// `|ℐ_a|^{-1/2} · (τ/(τ−λ) − 1)`
    pub deviation_bound: f64,
}

impl RowInverseCheck {
    /// Both bounds hold up to floating-point rounding.
    pub fn holds(&self) -> bool {
        let slack = |b: f64| b * (1.0 + 1e-9) + 1e-12;
        self.norm <= slack(self.norm_bound) && self.deviation <= slack(self.deviation_bound)
    }
}

pub fn check_row_inverse(gram: &GramMatrix, n_matrix: &NMatrix, a: usize, v: &[f64], lambda: f64) -> Result<RowInverseCheck> {
    let partition = gram
        .partition
        .as_ref()
        .ok_or_else(|| Error::Validation("idealized Gram has no partition".into()))?;
    let t = tau(n_matrix, partition)?;
    if !(lambda > 0.0 && lambda < t) {
        return Err(Error::Contract(format!("need 0 < λ < τ, got λ = {lambda}, τ = {t}")));
    }
    let block = partition
        .get(a)
        .filter(|b| !b.is_empty())
        .ok_or_else(|| Error::Validation(format!("template {a} has no samples")))?;
    let c = idealized_coefficients(gram, v, lambda)?;
    let size = block.len() as f64;
    let mut ind = vec![0.0; c.len()];
    for &i in block {
        ind[i] = 1.0 / size;
    }
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let deviation = ind.iter().zip(&c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let ratio = t / (t - lambda);
    Ok(RowInverseCheck {
        template: a,
        tau: t,
        lambda,
        norm,
        norm_bound: ratio / size.sqrt(),
        deviation,
        deviation_bound: (ratio - 1.0) / size.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_n_matrix, gram, KernelSpec};
    use crate::templates::{builtin, sample_dataset, Alphabet, Builtin};

    fn setup(b: Builtin, n: usize) -> (TemplateTask, Kernel, NMatrix, Dataset) {
        let task = builtin(&b).unwrap().with_cls();
        let k = Kernel::new(KernelSpec::trans(0.5, 0.5, 1.0, 0.3, 0)).unwrap();
        let nm = build_n_matrix(&task, &k, 0).unwrap();
        let ds = sample_dataset(&task, n, &Alphabet::range(0, 4 * n), 5).unwrap();
        (task, k, nm, ds)
    }

    #[test]
    fn ideal_gram_is_block_constant() {
        let (_, _, nm, ds) = setup(Builtin::SameDifferent, 40);
        let g = idealized_gram(&nm, &ds).unwrap();
        for (i, si) in ds.samples.iter().enumerate() {
            for (j, sj) in ds.samples.iter().enumerate() {
                assert_eq!(g.at(i, j), nm.at(si.template, sj.template));
            }
        }
    }

    #[test]
    fn ideal_vector_is_a_block_row() {
        let (task, k, nm, ds) = setup(Builtin::SameDifferent, 30);
        let g = idealized_gram(&nm, &ds).unwrap();
        let x = vec![3000, 3000, task.cls.unwrap()];
        let v = idealized_vector(&task, &k, &ds, &x, 4).unwrap();
        let i = ds.samples.iter().position(|s| s.template == 0).unwrap();
        assert_eq!(v, g.values.row(i).to_vec());
    }

    #[test]
    fn row_inverse_bounds_hold() {
        for b in [Builtin::SameDifferent, Builtin::Majority(3)] {
            let (task, k, nm, ds) = setup(b, 64);
            let g = idealized_gram(&nm, &ds).unwrap();
            let t = tau(&nm, g.partition.as_ref().unwrap()).unwrap();
            for (a, z) in task.templates.iter().enumerate() {
                let ws: Vec<usize> = z.wildcards().into_iter().collect();
                let s = random_substitution(&ws, &(3000..3010).collect::<Vec<_>>(), &mut Rng::new(a as u64));
                let (x, _) = substitute(z, &s).unwrap();
                let v = idealized_vector(&task, &k, &ds, &x, 9).unwrap();
                for lambda in [t / 8.0, t / 2.0] {
                    let c = check_row_inverse(&g, &nm, a, &v, lambda).unwrap();
                    assert!(c.holds(), "{c:?}");
                }
            }
        }
    }

    #[test]
    fn agrees_with_true_gram_off_diagonal_for_disjoint_samples() {
        let task = builtin(&Builtin::SameDifferent).unwrap();
        let k = Kernel::new(KernelSpec::mlp()).unwrap();
        // every sample uses its own pair of tokens
        let mut ds = sample_dataset(&task, 20, &Alphabet::range(0, 100), 1).unwrap();
        for (i, s) in ds.samples.iter_mut().enumerate() {
            let (a, b) = (2 * i, 2 * i + 1);
            s.tokens = if s.template == 0 { vec![a, a] } else { vec![a, b] };
        }
        let nm = build_n_matrix(&task, &k, 0).unwrap();
        let ideal = idealized_gram(&nm, &ds).unwrap();
        let real = gram(&k, &ds.inputs(), None).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                if i != j {
                    assert_eq!(ideal.at(i, j), real.at(i, j));
                }
            }
        }
    }
}
