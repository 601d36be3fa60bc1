//! Template tasks: strings over regular tokens and wildcards, substitution,
//! matching, sampling with controlled alphabets, and the builtin task zoo.

mod io;
mod matching;
mod sampling;
pub mod zoo;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{dataset_to_csv, TaskDoc};
pub use matching::{matches, templates_disjoint};
pub use sampling::{diversity_rho, make_disjoint_eval_split, sample_dataset, Splits};
pub use zoo::{builtin, Builtin};

/// Index into a vocabulary.
pub type Token = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symbol {
    Reg(Token),
    Wild(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real(f64),
    Sym(Symbol),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub symbols: Vec<Symbol>,
    pub label: Label,
}

impl Template {
    pub fn new(symbols: Vec<Symbol>, label: Label) -> Self {
        Template { symbols, label }
    }

    /// Template from a compact string: lowercase ASCII letters are
    /// wildcards (`a` = 0, `b` = 1, ...), digits are regular tokens.
    pub fn parse(pattern: &str, label: Label) -> Self {
        let symbols = pattern
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                'a'..='z' => Symbol::Wild(c as usize - 'a' as usize),
                '0'..='9' => Symbol::Reg(c as usize - '0' as usize),
                _ => panic!("unsupported pattern character {c:?}"),
            })
            .collect();
        Template { symbols, label }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Wildcards of the string, plus a label wildcard if there is one.
    pub fn wildcards(&self) -> BTreeSet<usize> {
        let mut w: BTreeSet<usize> = self
            .symbols
            .iter()
            .filter_map(|s| match s {
                Symbol::Wild(j) => Some(*j),
                Symbol::Reg(_) => None,
            })
            .collect();
        if let Label::Sym(Symbol::Wild(j)) = self.label {
            w.insert(j);
        }
        w
    }

    pub fn regulars(&self) -> BTreeSet<Token> {
        let mut r: BTreeSet<Token> = self
            .symbols
            .iter()
            .filter_map(|s| match s {
                Symbol::Reg(t) => Some(*t),
                Symbol::Wild(_) => None,
            })
            .collect();
        if let Label::Sym(Symbol::Reg(t)) = self.label {
            r.insert(t);
        }
        r
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self.label, Label::Sym(_))
    }
}

/// An injective wildcard → token map.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    map: BTreeMap<usize, Token>,
}

impl Substitution {
    pub fn new() -> Self {
        Substitution::default()
    }

    pub fn from_pairs(pairs: &[(usize, Token)]) -> Self {
        Substitution {
            map: pairs.iter().copied().collect(),
        }
    }

    pub fn bind(&mut self, wildcard: usize, token: Token) {
        self.map.insert(wildcard, token);
    }

    pub fn get(&self, wildcard: usize) -> Option<Token> {
        self.map.get(&wildcard).copied()
    }

    pub fn range(&self) -> BTreeSet<Token> {
        self.map.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Token)> + '_ {
        self.map.iter().map(|(&w, &t)| (w, t))
    }

    /// Checks that every wildcard of `z` is bound, that the map is
    /// injective, and that its range avoids the regular tokens of `z`.
    pub fn validate_for(&self, z: &Template) -> Result<()> {
        for w in z.wildcards() {
            if !self.map.contains_key(&w) {
                return Err(Error::MissingBinding(w));
            }
        }
        let mut seen: BTreeMap<Token, usize> = BTreeMap::new();
        for (&w, &t) in &self.map {
            if let Some(&first) = seen.get(&t) {
                return Err(Error::NotInjective {
                    token: t,
                    first,
                    second: w,
                });
            }
            seen.insert(t, w);
        }
        let regs = z.regulars();
        for w in z.wildcards() {
            let t = self.map[&w];
            if regs.contains(&t) {
                return Err(Error::RangeOverlap { token: t });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    Real(f64),
    Token(Token),
}

impl SampleLabel {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            SampleLabel::Real(v) => Some(*v),
            SampleLabel::Token(_) => None,
        }
    }

    pub fn as_token(&self) -> Option<Token> {
        match self {
            SampleLabel::Token(t) => Some(*t),
            SampleLabel::Real(_) => None,
        }
    }
}

/// Applies `s` to `z`, returning the substituted string and label.
pub fn substitute(z: &Template, s: &Substitution) -> Result<(Vec<Token>, SampleLabel)> {
    s.validate_for(z)?;
    let apply = |sym: &Symbol| match sym {
        Symbol::Reg(t) => *t,
        Symbol::Wild(w) => s.map[w],
    };
    let tokens = z.symbols.iter().map(apply).collect();
    let label = match &z.label {
        Label::Real(v) => SampleLabel::Real(*v),
        Label::Sym(sym) => SampleLabel::Token(apply(sym)),
    };
    Ok((tokens, label))
}

/// A set of tokens that substitutions may draw from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet(Vec<Token>);

impl Alphabet {
    pub fn new(mut tokens: Vec<Token>) -> Self {
        tokens.sort_unstable();
        tokens.dedup();
        Alphabet(tokens)
    }

    /// `{start, start + 1, .., start + len - 1}`.
    pub fn range(start: Token, len: usize) -> Self {
        Alphabet((start..start + len).collect())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, t: Token) -> bool {
        self.0.binary_search(&t).is_ok()
    }

    pub fn is_disjoint(&self, other: &Alphabet) -> bool {
        self.0.iter().all(|t| !other.contains(*t))
    }

    pub fn union(&self, other: &Alphabet) -> Alphabet {
        Alphabet::new(self.0.iter().chain(&other.0).copied().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SubstitutionDist {
    /// Uniformly random injective map into an alphabet (minus the
    /// template's regular tokens).
    Uniform(Alphabet),
    /// Uniform choice among a fixed list of maps.
    Fixed(Vec<Substitution>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateTask {
    pub name: String,
    pub templates: Vec<Template>,
    pub weights: Vec<f64>,
    pub substitution: SubstitutionDist,
    pub sigma: f64,
    pub vocab_size: usize,
    /// Reserved classification token appended by [`TemplateTask::with_cls`].
    pub cls: Option<Token>,
    /// Whether the task is meant to have pairwise disjoint templates.
    pub disjoint: bool,
}

/// Size of the free-token pool that builtin tasks reserve above their
/// regular tokens.
pub const DEFAULT_POOL: usize = 4096;

impl TemplateTask {
    /// Task with uniform template weights and a uniform substitution over
    /// every non-regular token of the vocabulary.
    pub fn new(name: &str, templates: Vec<Template>, vocab_size: usize) -> Result<Self> {
        let r = templates.len();
        let mut t = TemplateTask {
            name: name.to_string(),
            templates,
            weights: vec![1.0 / r.max(1) as f64; r],
            substitution: SubstitutionDist::Uniform(Alphabet::new(vec![])),
            sigma: 0.0,
            vocab_size,
            cls: None,
            disjoint: true,
        };
        t.substitution = SubstitutionDist::Uniform(Alphabet::new(t.free_tokens()));
        t.validate()?;
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.templates.first().map_or(0, Template::len)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn is_symbolic(&self) -> bool {
        self.templates.iter().any(Template::is_symbolic)
    }

    /// Largest number of wildcards used by any template.
    pub fn max_wildcards(&self) -> usize {
        self.templates
            .iter()
            .map(|z| z.wildcards().len())
            .max()
            .unwrap_or(0)
    }

    pub fn regulars(&self) -> BTreeSet<Token> {
        self.templates.iter().flat_map(|z| z.regulars()).collect()
    }

    /// Vocabulary tokens that no template uses as a regular token.
    pub fn free_tokens(&self) -> Vec<Token> {
        let regs = self.regulars();
        (0..self.vocab_size).filter(|t| !regs.contains(t)).collect()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    /// Resizes the vocabulary, resetting the substitution to uniform over
    /// the new free tokens.
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Result<Self> {
        self.vocab_size = vocab_size;
        self.substitution = SubstitutionDist::Uniform(Alphabet::new(self.free_tokens()));
        self.validate()?;
        Ok(self)
    }

    /// Appends a reserved classification token to every template. The new
    /// token takes index `vocab_size` and the vocabulary grows by one.
    pub fn with_cls(&self) -> Self {
        let cls = self.vocab_size;
        let mut t = self.clone();
        for z in &mut t.templates {
            z.symbols.push(Symbol::Reg(cls));
        }
        t.vocab_size += 1;
        t.cls = Some(cls);
        t.name = format!("{}+cls", self.name);
        t
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::Validation("templates must be non-empty".into()));
        }
        if self.templates.iter().any(|z| z.len() != k) {
            return Err(Error::Validation("templates differ in length".into()));
        }
        if self.weights.len() != self.templates.len()
            || self.weights.iter().any(|w| !(*w >= 0.0))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Validation(
                "weights must be a probability vector over templates".into(),
            ));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Validation("label noise must be nonnegative".into()));
        }
        for z in &self.templates {
            if let Some(t) = z.regulars().iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Validation(format!(
                    "regular token {t} outside vocabulary of size {}",
                    self.vocab_size
                )));
            }
        }
        let ids: BTreeSet<usize> = self.templates.iter().flat_map(|z| z.wildcards()).collect();
        if ids.iter().enumerate().any(|(i, &w)| i != w) {
            return Err(Error::Validation(format!(
                "wildcard ids must be contiguous from 0, got {ids:?}"
            )));
        }
        Ok(())
    }

    /// Checks pairwise disjointness of all templates.
    pub fn check_disjoint(&self) -> Result<bool> {
        for i in 0..self.templates.len() {
            for j in i + 1..self.templates.len() {
                if !templates_disjoint(&self.templates[i], &self.templates[j])? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Exact label of a template as a real number (symbolic labels have none).
    pub fn real_label(&self, j: usize) -> Option<f64> {
        match self.templates[j].label {
            Label::Real(v) => Some(v),
            Label::Sym(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<Token>,
    pub label: SampleLabel,
    pub template: usize,
    pub substitution: Substitution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub alphabet: Alphabet,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<Token>> {
        self.samples.iter().map(|s| s.tokens.clone()).collect()
    }

    pub fn real_labels(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.label.as_real()).collect()
    }

    pub fn token_labels(&self) -> Option<Vec<Token>> {
        self.samples.iter().map(|s| s.label.as_token()).collect()
    }

    /// Tokens placed by substitutions (regular tokens excluded).
    pub fn substituted_tokens(&self) -> BTreeSet<Token> {
        self.samples
            .iter()
            .flat_map(|s| s.substitution.range())
            .collect()
    }

    /// Sample indices grouped by source template, for `r` templates.
    pub fn partition(&self, r: usize) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); r];
        for (i, s) in self.samples.iter().enumerate() {
            parts[s.template].push(i);
        }
        parts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: f64) -> Label {
        Label::Real(v)
    }

    #[test]
    fn substitute_copy_template() {
        let z = Template::new(vec![Symbol::Wild(0)], Label::Sym(Symbol::Wild(0)));
        let (x, y) = substitute(&z, &Substitution::from_pairs(&[(0, 3)])).unwrap();
        assert_eq!(x, vec![3]);
        assert_eq!(y, SampleLabel::Token(3));
    }

    #[test]
    fn zero_wildcards_verbatim() {
        let z = Template::parse("123", r(0.5));
        let (x, y) = substitute(&z, &Substitution::new()).unwrap();
        assert_eq!(x, vec![1, 2, 3]);
        assert_eq!(y, SampleLabel::Real(0.5));
    }

    #[test]
    fn substitution_errors_are_distinct() {
        let z = Template::parse("ab1", r(1.0));
        assert!(matches!(
            substitute(&z, &Substitution::from_pairs(&[(0, 5)])),
            Err(Error::MissingBinding(1))
        ));
        assert!(matches!(
            substitute(&z, &Substitution::from_pairs(&[(0, 5), (1, 5)])),
            Err(Error::NotInjective { token: 5, .. })
        ));
        assert!(matches!(
            substitute(&z, &Substitution::from_pairs(&[(0, 5), (1, 1)])),
            Err(Error::RangeOverlap { token: 1 })
        ));
    }

    #[test]
    fn cls_appends_reserved_token() {
        let t = TemplateTask::new("sd", vec![Template::parse("aa", r(1.0)), Template::parse("ab", r(-1.0))], 10)
            .unwrap();
        let c = t.with_cls();
        assert_eq!(c.cls, Some(10));
        assert_eq!(c.vocab_size, 11);
        assert!(c.templates.iter().all(|z| z.symbols.last() == Some(&Symbol::Reg(10))));
        assert_eq!(c.k(), 3);
        // the original task is untouched
        assert_eq!(t.k(), 2);
    }

    #[test]
    fn validation_rejects_bad_weights_and_lengths() {
        let t = TemplateTask::new("x", vec![Template::parse("aa", r(1.0)), Template::parse("ab", r(-1.0))], 10)
            .unwrap();
        assert!(t.clone().with_weights(vec![0.7, 0.7]).is_err());
        assert!(TemplateTask::new("x", vec![Template::parse("aa", r(1.0)), Template::parse("a", r(-1.0))], 10).is_err());
        assert!(TemplateTask::new("x", vec![Template::parse("a9", r(1.0))], 5).is_err());
    }
}
