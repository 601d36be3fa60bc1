use serde::{Deserialize, Serialize};

use super::evaluator::Kernel;
use super::gram::{cross_vector, gram, krr_fit, krr_predict};
use super::nmatrix::random_substitution;
use crate::error::{Error, Result};
use crate::templates::{sample_dataset, substitute, Alphabet, TemplateTask, Token};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnseenConfig {
    pub n: usize,
    /// Defaults to `n / 4`.
    #[serde(default)]
    pub lambda: Option<f64>,
    pub seeds: Vec<u64>,
    /// Test strings per seed, cycling through the templates.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Training alphabet size; defaults to `4n`.
    #[serde(default)]
    pub train_alphabet: Option<usize>,
    /// Test alphabet size; defaults to `2 · n_test`.
    #[serde(default)]
    pub test_alphabet: Option<usize>,
}

fn default_n_test() -> usize {
    100
}

impl UnseenConfig {
    pub fn new(n: usize, seeds: Vec<u64>) -> Self {
        UnseenConfig {
            n,
            lambda: None,
            seeds,
            n_test: default_n_test(),
            train_alphabet: None,
            test_alphabet: None,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.n as f64 / 4.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub template: usize,
    pub tokens: Vec<Token>,
    pub target: f64,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnseenRow {
    pub seed: u64,
    pub n: usize,
    pub lambda: f64,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    pub predictions: Vec<TestPrediction>,
}

/// Kernel ridge regression on `n` samples, scored on strings whose
/// wildcards are filled from an alphabet disjoint from the training one.
/// Targets are the noiseless template labels.
pub fn unseen_symbol_eval(task: &TemplateTask, kernel: &Kernel, cfg: &UnseenConfig) -> Result<Vec<UnseenRow>> {
    if task.is_symbolic() {
        return Err(Error::Validation("unseen-symbol KRR needs real labels".into()));
    }
    if cfg.n == 0 || cfg.n_test == 0 || cfg.seeds.is_empty() {
        return Err(Error::Config("need n ≥ 1, n_test ≥ 1 and at least one seed".into()));
    }
    let lambda = cfg.lambda();
    let a_tr = cfg.train_alphabet.unwrap_or(4 * cfg.n);
    let a_te = cfg.test_alphabet.unwrap_or(2 * cfg.n_test);
    let free = task.free_tokens();
    if free.len() < a_tr + a_te {
        return Err(Error::Validation(format!(
            "vocabulary of size {} cannot hold a train alphabet of {a_tr} and a test alphabet of {a_te}",
            task.vocab_size
        )));
    }
    let train_alpha = Alphabet::new(free[..a_tr].to_vec());
    let test_pool = &free[a_tr..a_tr + a_te];
    if test_pool.len() < task.max_wildcards() {
        return Err(Error::Validation("test alphabet smaller than the wildcard count".into()));
    }

    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let root = Rng::new(seed);
        let ds = sample_dataset(task, cfg.n, &train_alpha, root.child("train").seed())?;
        let xs = ds.inputs();
        let ys = ds.real_labels().expect("real-labelled task");
        let g = gram(kernel, &xs, Some(ds.partition(task.len())))?;
        let model = krr_fit(&g, &ys, lambda)?;

        let mut rng = root.child("test");
        let mut preds = Vec::with_capacity(cfg.n_test);
        for i in 0..cfg.n_test {
            let j = i % task.len();
            let z = &task.templates[j];
            let ws: Vec<usize> = z.wildcards().into_iter().collect();
            let s = random_substitution(&ws, test_pool, &mut rng);
            let (x, _) = substitute(z, &s)?;
            let f = krr_predict(&model.weights, &cross_vector(kernel, &xs, &x)?)?;
            preds.push(TestPrediction {
                template: j,
                tokens: x,
                target: task.real_label(j).expect("real label"),
                prediction: f,
            });
        }
        let errs: Vec<f64> = preds.iter().map(|p| (p.prediction - p.target).abs()).collect();
        rows.push(UnseenRow {
            seed,
            n: cfg.n,
            lambda,
            mean_abs_error: errs.iter().sum::<f64>() / errs.len() as f64,
            max_abs_error: errs.iter().copied().fold(0.0, f64::max),
            predictions: preds,
        });
    }
    Ok(rows)
}

/// Median over seeds of the per-seed mean absolute error.
pub fn median_error(rows: &[UnseenRow]) -> f64 {
    let errs: Vec<f64> = rows.iter().map(|r| r.mean_abs_error).collect();
    crate::train::median(&errs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::templates::{builtin, Builtin};

    #[test]
    fn inner_product_kernel_cannot_tell_cc_from_cd() {
        let task = builtin(&Builtin::SameDifferent).unwrap().with_cls();
        let k = Kernel::new(KernelSpec::mlp()).unwrap();
        let rows = unseen_symbol_eval(&task, &k, &UnseenConfig::new(64, vec![0, 1])).unwrap();
        for r in &rows {
            let first = r.predictions[0].prediction;
            assert!(r.predictions.iter().all(|p| p.prediction.to_bits() == first.to_bits()));
            assert!(r.mean_abs_error >= 0.9);
        }
    }

    #[test]
    fn alphabets_are_disjoint() {
        let task = builtin(&Builtin::SameDifferent).unwrap().with_vocab_size(60).unwrap();
        let k = Kernel::new(KernelSpec::mlp()).unwrap();
        let cfg = UnseenConfig { n_test: 10, ..UnseenConfig::new(8, vec![3]) };
        let rows = unseen_symbol_eval(&task, &k, &cfg).unwrap();
        assert!(rows[0].predictions.iter().flat_map(|p| &p.tokens).all(|&t| t >= 32));
        let too_big = UnseenConfig::new(20, vec![3]);
        assert!(unseen_symbol_eval(&task, &k, &too_big).is_err());
    }
}
