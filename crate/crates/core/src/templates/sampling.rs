use std::collections::BTreeSet;

use super::{
    substitute, Alphabet, Dataset, Sample, SampleLabel, Substitution, SubstitutionDist,
    TemplateTask, Token,
};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Inverse of the largest probability that any single token is placed by a
/// substitution, minimized over templates.
pub fn diversity_rho(task: &TemplateTask) -> f64 {
    let mut rho = f64::INFINITY;
    for z in &task.templates {
        let w = z.wildcards();
        if w.is_empty() {
            continue;
        }
        let p_max = match &task.substitution {
            SubstitutionDist::Uniform(alpha) => {
                let regs = z.regulars();
                let avail = alpha.tokens().iter().filter(|t| !regs.contains(t)).count();
                if avail == 0 {
                    return 0.0;
                }
                // every available token is equally likely to be in the range
                w.len() as f64 / avail as f64
            }
            SubstitutionDist::Fixed(maps) => {
                if maps.is_empty() {
                    continue;
                }
                let mut counts = std::collections::BTreeMap::<Token, usize>::new();
                for s in maps {
                    let range: BTreeSet<Token> = w.iter().filter_map(|&j| s.get(j)).collect();
                    for t in range {
                        *counts.entry(t).or_default() += 1;
                    }
                }
                counts.values().copied().max().unwrap_or(0) as f64 / maps.len() as f64
            }
        };
        if p_max > 0.0 {
            rho = rho.min(1.0 / p_max);
        }
    }
    rho
}

fn draw_substitution(
    task: &TemplateTask,
    j: usize,
    alphabet: &Alphabet,
    rng: &mut Rng,
) -> Result<Substitution> {
    let z = &task.templates[j];
    match &task.substitution {
        SubstitutionDist::Fixed(maps) => {
            if maps.is_empty() {
                return Err(Error::Validation("empty substitution list".into()));
            }
            Ok(maps[rng.below(maps.len())].clone())
        }
        SubstitutionDist::Uniform(_) => {
            let regs = z.regulars();
            let avail: Vec<Token> = alphabet
                .tokens()
                .iter()
                .copied()
                .filter(|t| !regs.contains(t))
                .collect();
            let w: Vec<usize> = z.wildcards().into_iter().collect();
            if avail.len() < w.len() {
                return Err(Error::Validation(format!(
                    "alphabet of {} usable tokens cannot fill {} wildcards",
                    avail.len(),
                    w.len()
                )));
            }
            let picks = rng.distinct(avail.len(), w.len());
            let mut s = Substitution::new();
            for (wj, p) in w.into_iter().zip(picks) {
                s.bind(wj, avail[p]);
            }
            Ok(s)
        }
    }
}

/// Draws `n` i.i.d. samples, substituting wildcards from `alphabet` (for a
/// uniform substitution distribution). Real labels get N(0, σ²) noise.
pub fn sample_dataset(
    task: &TemplateTask,
    n: usize,
    alphabet: &Alphabet,
    seed: u64,
) -> Result<Dataset> {
    task.validate()?;
    let need = task.max_wildcards();
    if matches!(task.substitution, SubstitutionDist::Uniform(_)) && alphabet.len() < need {
        return Err(Error::Validation(format!(
            "alphabet of size {} is smaller than the {} wildcards of the task",
            alphabet.len(),
            need
        )));
    }
    let mut rng = Rng::new(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let j = rng.categorical(&task.weights);
        let s = draw_substitution(task, j, alphabet, &mut rng)?;
        let (tokens, mut label) = substitute(&task.templates[j], &s)?;
        if let SampleLabel::Real(v) = &mut label {
            if task.sigma > 0.0 {
                *v += task.sigma * rng.normal();
            }
        }
        samples.push(Sample {
            tokens,
            label,
            template: j,
            substitution: s,
        });
    }
    Ok(Dataset {
        samples,
        alphabet: alphabet.clone(),
        seed,
    })
}

/// Samples on a fresh alphabet: the `alphabet_size` smallest vocabulary
/// tokens that are neither in `exclude` nor regular tokens of the task.
pub fn make_disjoint_eval_split(
    task: &TemplateTask,
    n_eval: usize,
    exclude: &Alphabet,
    alphabet_size: usize,
    seed: u64,
) -> Result<Dataset> {
    let fresh: Vec<Token> = task
        .free_tokens()
        .into_iter()
        .filter(|t| !exclude.contains(*t))
        .take(alphabet_size)
        .collect();
    if fresh.len() < alphabet_size {
        return Err(Error::Validation(format!(
            "vocabulary of size {} exhausted: needed {} fresh tokens, found {}",
            task.vocab_size,
            alphabet_size,
            fresh.len()
        )));
    }
    let alpha = Alphabet::new(fresh);
    let ds = sample_dataset(task, n_eval, &alpha, seed)?;
    let seen = ds.substituted_tokens();
    assert!(
        seen.iter().all(|t| !exclude.contains(*t)),
        "eval substitution reused an excluded token"
    );
    Ok(ds)
}

/// Train/validation/test datasets on pairwise disjoint alphabets.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Training alphabet of size `n` (the first `n` free tokens), and
    /// validation and test sets of `n_eval` samples each on the next two
    /// blocks of `eval_alphabet` fresh tokens.
    pub fn generate(
        task: &TemplateTask,
        n: usize,
        n_eval: usize,
        eval_alphabet: usize,
        seed: u64,
    ) -> Result<Self> {
        let free = task.free_tokens();
        if free.len() < n + 2 * eval_alphabet {
            return Err(Error::Validation(format!(
                "vocabulary of size {} too small for a train alphabet of {} plus two eval alphabets of {}",
                task.vocab_size, n, eval_alphabet
            )));
        }
        let rng = Rng::new(seed);
        let train_alpha = Alphabet::new(free[..n].to_vec());
        let train = sample_dataset(task, n, &train_alpha, rng.child("train").seed())?;
        let val = make_disjoint_eval_split(task, n_eval, &train_alpha, eval_alphabet, rng.child("val").seed())?;
        let seen = train_alpha.union(&val.alphabet);
        let test = make_disjoint_eval_split(task, n_eval, &seen, eval_alphabet, rng.child("test").seed())?;
        Ok(Splits { train, val, test })
    }
}
