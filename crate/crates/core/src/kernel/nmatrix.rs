use serde::{Deserialize, Serialize};

use super::evaluator::Kernel;
use crate::error::{Error, Result};
use crate::templates::{substitute, Substitution, TemplateTask, Token};
use crate::tensor::{linalg, Rng, Tensor};

/// Template similarity matrix `N_{j,j'} = K(sub(z_j, s_j), sub(z_j', s'_j'))`
/// with every row witness disjoint from every column witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NMatrix {
    pub values: Tensor,
    pub std_errors: Tensor,
    pub row_witnesses: Vec<Substitution>,
    pub col_witnesses: Vec<Substitution>,
    pub condition_number: f64,
    pub determinant: f64,
}

impl NMatrix {
    pub fn r(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn at(&self, j: usize, jp: usize) -> f64 {
        self.values.data()[j * self.r() + jp]
    }

    /// `‖N⁻¹‖` in the spectral norm; infinite when `N` is singular.
    pub fn inverse_norm(&self) -> Result<f64> {
        let s = linalg::singular_values(&self.values)?;
        let smin = *s.last().expect("nonempty");
        Ok(if smin > 0.0 { 1.0 / smin } else { f64::INFINITY })
    }
}

/// Free tokens that witnesses may use: the top of the vocabulary, as many
/// as four times the wildcards needed by both sides.
pub(crate) fn witness_pool(task: &TemplateTask, avoid: &[Token], need: usize) -> Result<Vec<Token>> {
    let free: Vec<Token> = task.free_tokens().into_iter().filter(|t| !avoid.contains(t)).collect();
    if free.len() < need {
        return Err(Error::Validation(format!(
            "vocabulary of size {} has {} usable free tokens, witnesses need {need}",
            task.vocab_size,
            free.len()
        )));
    }
    let take = (4 * need).min(free.len());
    Ok(free[free.len() - take..].to_vec())
}

pub(crate) fn random_substitution(wildcards: &[usize], pool: &[Token], rng: &mut Rng) -> Substitution {
    let mut s = Substitution::new();
    for (w, p) in wildcards.iter().zip(rng.distinct(pool.len(), wildcards.len())) {
        s.bind(*w, pool[p]);
    }
    s
}

/// Builds `N` from fresh witnesses drawn at the top of the vocabulary.
pub fn build_n_matrix(task: &TemplateTask, kernel: &Kernel, seed: u64) -> Result<NMatrix> {
    task.validate()?;
    if !task.check_disjoint()? {
        return Err(Error::Validation(format!("templates of {} are not pairwise disjoint", task.name)));
    }
    let w = task.max_wildcards();
    let pool = witness_pool(task, &[], 2 * w)?;
    let mut rng = Rng::new(seed);
    let mut order = pool.clone();
    rng.shuffle(&mut order);
    let (rows_pool, cols_pool) = order.split_at(order.len() / 2);

    let r = task.len();
    let wild: Vec<Vec<usize>> = task.templates.iter().map(|z| z.wildcards().into_iter().collect()).collect();
    let row_witnesses: Vec<Substitution> = wild.iter().map(|ws| random_substitution(ws, rows_pool, &mut rng)).collect();
    let col_witnesses: Vec<Substitution> = wild.iter().map(|ws| random_substitution(ws, cols_pool, &mut rng)).collect();
    let rows: Vec<Vec<Token>> = task
        .templates
        .iter()
        .zip(&row_witnesses)
        .map(|(z, s)| substitute(z, s).map(|(x, _)| x))
        .collect::<Result<_>>()?;
    let cols: Vec<Vec<Token>> = task
        .templates
        .iter()
        .zip(&col_witnesses)
        .map(|(z, s)| substitute(z, s).map(|(x, _)| x))
        .collect::<Result<_>>()?;

    let mut values = Tensor::zeros(&[r, r]);
    let mut errs = Tensor::zeros(&[r, r]);
    for j in 0..r {
        for jp in 0..r {
            let e = kernel.eval(&rows[j], &cols[jp])?;
            values.set(&[j, jp], e.value);
            errs.set(&[j, jp], e.std_error);
        }
    }
    Ok(NMatrix {
        condition_number: linalg::condition_number(&values)?,
        determinant: linalg::determinant(&values)?,
        values,
        std_errors: errs,
        row_witnesses,
        col_witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::templates::{builtin, Builtin};

    #[test]
    fn inner_product_same_different_is_singular() {
        let task = builtin(&Builtin::SameDifferent).unwrap();
        let n = build_n_matrix(&task, &Kernel::new(KernelSpec::mlp()).unwrap(), 3).unwrap();
        let k0 = 1.0 / std::f64::consts::PI;
        assert!(n.values.data().iter().all(|&v| (v - k0).abs() < 1e-15));
        assert!(n.determinant.abs() < 1e-10);
        assert!(n.condition_number.is_infinite());
    }

    #[test]
    fn witnesses_are_disjoint_and_avoid_regulars() {
        let task = builtin(&Builtin::SameDifferent).unwrap().with_cls();
        let n = build_n_matrix(&task, &Kernel::new(KernelSpec::mlp()).unwrap(), 1).unwrap();
        let rows: Vec<Token> = n.row_witnesses.iter().flat_map(|s| s.range()).collect();
        for s in &n.col_witnesses {
            assert!(s.range().iter().all(|t| !rows.contains(t)));
        }
        assert!(rows.iter().all(|t| Some(*t) != task.cls));
    }

    #[test]
    fn trans_kernel_is_witness_independent() {
        let task = builtin(&Builtin::SameDifferent).unwrap().with_cls();
        let k = Kernel::new(KernelSpec::trans(0.5, 0.5, 1.0, 0.3, 0)).unwrap();
        let a = build_n_matrix(&task, &k, 1).unwrap();
        let b = build_n_matrix(&task, &Kernel::new(k.spec().clone()).unwrap(), 2).unwrap();
        assert_ne!(a.row_witnesses, b.row_witnesses);
        assert_eq!(a.values, b.values);
        assert!(a.condition_number < 1e6, "{}", a.condition_number);
    }

    #[test]
    fn tiny_vocabulary_rejected() {
        let task = builtin(&Builtin::SameDifferent).unwrap().with_vocab_size(3).unwrap();
        assert!(matches!(
            build_n_matrix(&task, &Kernel::new(KernelSpec::mlp()).unwrap(), 0),
            Err(Error::Validation(_))
        ));
    }
}
