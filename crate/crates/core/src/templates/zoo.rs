//! Builtin template tasks.
//!
//! Regular tokens of a builtin task occupy the lowest vocabulary indices;
//! a pool of [`DEFAULT_POOL`] free tokens follows for substitutions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{Label, Symbol, Template, TemplateTask, DEFAULT_POOL};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Builtin {
    SameDifferent,
    AbaVsAbb,
    AbabVsAabb,
    Majority(usize),
    RandomTask {
        templates: usize,
        k: usize,
        wildcards: usize,
        regulars: usize,
        seed: u64,
    },
    Copy,
    PrintProgram,
    StringAssignProgram,
    DistributionOf3,
    MatchToSample,
    /// One attribute (shape, number or color) of a progressive-matrix item.
    RavenDimension,
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::SameDifferent => write!(f, "same_different"),
            Builtin::AbaVsAbb => write!(f, "aba_vs_abb"),
            Builtin::AbabVsAabb => write!(f, "abab_vs_aabb"),
            Builtin::Majority(k) => write!(f, "majority:{k}"),
            Builtin::RandomTask {
                templates,
                k,
                wildcards,
                regulars,
                seed,
            } => write!(f, "random_task:{templates},{k},{wildcards},{regulars},{seed}"),
            Builtin::Copy => write!(f, "copy"),
            Builtin::PrintProgram => write!(f, "print_program"),
            Builtin::StringAssignProgram => write!(f, "string_assign_program"),
            Builtin::DistributionOf3 => write!(f, "distribution_of_3"),
            Builtin::MatchToSample => write!(f, "match_to_sample"),
            Builtin::RavenDimension => write!(f, "raven_dimension"),
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;

    /// Names as printed by `Display`, e.g. `majority:5` or
    /// `random_task:8,4,2,3,17`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let nums = |a: Option<&str>| -> Result<Vec<u64>> {
            a.unwrap_or("")
                .split(',')
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad builtin argument {x:?} in {s:?}")))
                })
                .collect()
        };
        Ok(match name {
            "same_different" => Builtin::SameDifferent,
            "aba_vs_abb" => Builtin::AbaVsAbb,
            "abab_vs_aabb" => Builtin::AbabVsAabb,
            "majority" => match nums(args)?.as_slice() {
                [k] => Builtin::Majority(*k as usize),
                _ => return Err(Error::Config("majority needs one argument, e.g. majority:5".into())),
            },
            "random_task" => match nums(args)?.as_slice() {
                [r, k, w, x, seed] => Builtin::RandomTask {
                    templates: *r as usize,
                    k: *k as usize,
                    wildcards: *w as usize,
                    regulars: *x as usize,
                    seed: *seed,
                },
                _ => {
                    return Err(Error::Config(
                        "random_task needs r,k,wildcards,regulars,seed".into(),
                    ))
                }
            },
            "copy" => Builtin::Copy,
            "print_program" => Builtin::PrintProgram,
            "string_assign_program" => Builtin::StringAssignProgram,
            "distribution_of_3" => Builtin::DistributionOf3,
            "match_to_sample" => Builtin::MatchToSample,
            "raven_dimension" => Builtin::RavenDimension,
            _ => return Err(Error::Config(format!("unknown builtin task {s:?}"))),
        })
    }
}

fn finish(name: &str, templates: Vec<Template>, regulars: usize) -> Result<TemplateTask> {
    TemplateTask::new(name, templates, regulars + DEFAULT_POOL)
}

fn real(p: &str, v: f64) -> Template {
    Template::parse(p, Label::Real(v))
}

pub fn builtin(kind: &Builtin) -> Result<TemplateTask> {
    let name = kind.to_string();
    match kind {
        Builtin::SameDifferent => finish(&name, vec![real("aa", 1.0), real("ab", -1.0)], 0),
        Builtin::AbaVsAbb => finish(&name, vec![real("aba", 1.0), real("abb", -1.0)], 0),
        Builtin::AbabVsAabb => finish(&name, vec![real("abab", 1.0), real("aabb", -1.0)], 0),
        Builtin::Majority(k) => majority(*k),
        Builtin::RandomTask {
            templates,
            k,
            wildcards,
            regulars,
            seed,
        } => random_task(*templates, *k, *wildcards, *regulars, *seed),
        Builtin::Copy => finish(
            &name,
            vec![Template::new(vec![Symbol::Wild(0)], Label::Sym(Symbol::Wild(0)))],
            0,
        ),
        Builtin::PrintProgram => program(
            &name,
            &[("α=1;β=-1;print(α)", Some(1.0), None), ("α=1;β=-1;print(β)", Some(-1.0), None)],
        ),
        Builtin::StringAssignProgram => program(
            &name,
            &[
                ("α=\"γ\";β=\"δ\";print(α)", None, Some('γ')),
                ("α=\"γ\";β=\"δ\";print(β)", None, Some('δ')),
            ],
        ),
        Builtin::DistributionOf3 => distribution_of_3(),
        Builtin::MatchToSample => match_to_sample(),
        Builtin::RavenDimension => raven_dimension(),
    }
}

/// Templates α·{α,β}^(k-1); label +1 when α fills more than (k+1)/2
/// positions, else −1.
fn majority(k: usize) -> Result<TemplateTask> {
    if !(2..=16).contains(&k) {
        return Err(Error::Validation(format!("majority length {k} outside 2..=16")));
    }
    let mut templates = Vec::with_capacity(1 << (k - 1));
    for mask in 0..(1usize << (k - 1)) {
        let mut symbols = vec![Symbol::Wild(0)];
        for i in 0..k - 1 {
            symbols.push(Symbol::Wild((mask >> i) & 1));
        }
        let count = symbols.iter().filter(|s| **s == Symbol::Wild(0)).count();
        let label = if 2 * count > k + 1 { 1.0 } else { -1.0 };
        templates.push(Template::new(symbols, Label::Real(label)));
    }
    finish(&format!("majority:{k}"), templates, 0)
}

fn random_task(r: usize, k: usize, wildcards: usize, regulars: usize, seed: u64) -> Result<TemplateTask> {
    if r < 2 || k == 0 || wildcards == 0 {
        return Err(Error::Validation(
            "random_task needs at least 2 templates, k >= 1 and one wildcard".into(),
        ));
    }
    let alphabet = wildcards + regulars;
    let total = (alphabet as f64).powi(k as i32);
    if total < r as f64 {
        return Err(Error::Validation(format!(
            "cannot draw {r} distinct templates from {alphabet}^{k}"
        )));
    }
    const MAX_TRIES: usize = 1000;
    let mut rng = Rng::new(seed);
    for _ in 0..MAX_TRIES {
        let mut templates: Vec<Vec<Symbol>> = Vec::with_capacity(r);
        while templates.len() < r {
            let z: Vec<Symbol> = (0..k)
                .map(|_| {
                    let c = rng.below(alphabet);
                    if c < wildcards {
                        Symbol::Wild(c)
                    } else {
                        Symbol::Reg(c - wildcards)
                    }
                })
                .collect();
            if !templates.contains(&z) {
                templates.push(z);
            }
        }
        // relabel wildcards contiguously in order of first appearance
        let mut ids = BTreeMap::new();
        for z in &mut templates {
            for s in z.iter_mut() {
                if let Symbol::Wild(w) = s {
                    let next = ids.len();
                    *w = *ids.entry(*w).or_insert(next);
                }
            }
        }
        let labels = rng.normals(r);
        let mean = labels.iter().sum::<f64>() / r as f64;
        let sd = (labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / r as f64).sqrt();
        let templates: Vec<Template> = templates
            .into_iter()
            .zip(&labels)
            .map(|(s, y)| Template::new(s, Label::Real((y - mean) / sd)))
            .collect();
        let task = finish(
            &format!("random_task:{r},{k},{wildcards},{regulars},{seed}"),
            templates,
            regulars,
        )?;
        if task.check_disjoint()? {
            return Ok(task);
        }
    }
    Err(Error::Validation(format!(
        "no pairwise disjoint draw of {r} templates after {MAX_TRIES} attempts"
    )))
}

/// Tokenizes program text: each Greek letter is a wildcard slot, every
/// other character a fixed token.
fn program(name: &str, rows: &[(&str, Option<f64>, Option<char>)]) -> Result<TemplateTask> {
    const VARS: [char; 4] = ['α', 'β', 'γ', 'δ'];
    let mut chars: BTreeMap<char, usize> = BTreeMap::new();
    let mut order: Vec<char> = Vec::new();
    for (text, _, _) in rows {
        for c in text.chars().filter(|c| !VARS.contains(c)) {
            if !chars.contains_key(&c) {
                chars.insert(c, order.len());
                order.push(c);
            }
        }
    }
    let wild = |c: char| VARS.iter().position(|&v| v == c);
    let templates = rows
        .iter()
        .map(|(text, real, sym)| {
            let symbols = text
                .chars()
                .map(|c| match wild(c) {
                    Some(w) => Symbol::Wild(w),
                    None => Symbol::Reg(chars[&c]),
                })
                .collect();
            let label = match (real, sym) {
                (Some(v), _) => Label::Real(*v),
                (None, Some(c)) => Label::Sym(Symbol::Wild(wild(*c).expect("label variable"))),
                (None, None) => unreachable!("program row without label"),
            };
            Template::new(symbols, label)
        })
        .collect();
    finish(name, templates, order.len())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// First row αβγ, second row a permutation of it with the last cell blank,
/// third row the four answer options (αβγ plus a distractor ε) in any
/// order. The label is the 1-based option position of the missing item.
fn distribution_of_3() -> Result<TemplateTask> {
    const BLANK: usize = 0;
    let mut templates = Vec::new();
    for p in permutations(3) {
        for q in permutations(4) {
            let mut s: Vec<Symbol> = (0..3).map(Symbol::Wild).collect();
            s.push(Symbol::Wild(p[0]));
            s.push(Symbol::Wild(p[1]));
            s.push(Symbol::Reg(BLANK));
            s.extend(q.iter().map(|&w| Symbol::Wild(w)));
            let answer = q.iter().position(|&w| w == p[2]).unwrap() + 1;
            templates.push(Template::new(s, Label::Real(answer as f64)));
        }
    }
    finish("distribution_of_3", templates, 1)
}

/// A sample row of three items followed by two option rows; exactly one
/// option repeats the sample's equality pattern. Every row uses its own
/// wildcards. The label is the 1-based position of the matching option.
fn match_to_sample() -> Result<TemplateTask> {
    const PATTERNS: [[usize; 3]; 5] = [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1], [0, 1, 2]];
    let mut templates = Vec::new();
    for (pi, p) in PATTERNS.iter().enumerate() {
        for correct in [1usize, 2] {
            for (qi, q) in PATTERNS.iter().enumerate() {
                if qi == pi {
                    continue;
                }
                let rows = if correct == 1 { [p, p, q] } else { [p, q, p] };
                let mut next = 0;
                let mut s = Vec::with_capacity(9);
                for row in rows {
                    let width = row.iter().max().unwrap() + 1;
                    s.extend(row.iter().map(|&o| Symbol::Wild(next + o)));
                    next += width;
                }
                templates.push(Template::new(s, Label::Real(correct as f64)));
            }
        }
    }
    finish("match_to_sample", templates, 0)
}

/// Three rows over one attribute: αβγ, a permutation, and a permutation
/// with its last cell hidden, labelled by the hidden value. One extra
/// template covers constant rows.
fn raven_dimension() -> Result<TemplateTask> {
    const HIDDEN: usize = 0;
    let mut templates = Vec::new();
    for p in permutations(3) {
        for q in permutations(3) {
            let mut s: Vec<Symbol> = (0..3).map(Symbol::Wild).collect();
            s.extend(p.iter().map(|&w| Symbol::Wild(w)));
            s.push(Symbol::Wild(q[0]));
            s.push(Symbol::Wild(q[1]));
            s.push(Symbol::Reg(HIDDEN));
            templates.push(Template::new(s, Label::Sym(Symbol::Wild(q[2]))));
        }
    }
    let c = |w| Symbol::Wild(w);
    templates.push(Template::new(
        vec![c(0), c(0), c(0), c(1), c(1), c(1), c(2), c(2), Symbol::Reg(HIDDEN)],
        Label::Sym(Symbol::Wild(2)),
    ));
    finish("raven_dimension", templates, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{substitute, Substitution};

    #[test]
    fn counts() {
        assert_eq!(builtin(&Builtin::DistributionOf3).unwrap().len(), 144);
        assert_eq!(builtin(&Builtin::MatchToSample).unwrap().len(), 40);
        assert_eq!(builtin(&Builtin::RavenDimension).unwrap().len(), 37);
        for k in 2..=8 {
            assert_eq!(builtin(&Builtin::Majority(k)).unwrap().len(), 1 << (k - 1));
        }
    }

    #[test]
    fn majority_three_labels() {
        let t = builtin(&Builtin::Majority(3)).unwrap();
        let find = |p: &str| {
            let z = Template::parse(p, Label::Real(0.0));
            t.templates.iter().find(|x| x.symbols == z.symbols).unwrap().label
        };
        assert_eq!(find("aaa"), Label::Real(1.0));
        assert_eq!(find("abb"), Label::Real(-1.0));
    }

    #[test]
    fn figure_examples_are_templates() {
        // distribution of 3: "αβγ βγ□ αγεβ" has label +1 and "αβγ γβ□ εβαγ" has +3
        let t = builtin(&Builtin::DistributionOf3).unwrap();
        let w = Symbol::Wild;
        let blank = Symbol::Reg(0);
        let lookup = |s: Vec<Symbol>| t.templates.iter().find(|z| z.symbols == s).map(|z| z.label);
        assert_eq!(
            lookup(vec![w(0), w(1), w(2), w(1), w(2), blank, w(0), w(2), w(3), w(1)]),
            Some(Label::Real(1.0))
        );
        assert_eq!(
            lookup(vec![w(0), w(1), w(2), w(2), w(1), blank, w(3), w(1), w(0), w(2)]),
            Some(Label::Real(3.0))
        );

        // match to sample: "αββ γδδ εετ" has label +1
        let m = builtin(&Builtin::MatchToSample).unwrap();
        let s = vec![w(0), w(1), w(1), w(2), w(3), w(3), w(4), w(4), w(5)];
        assert_eq!(m.templates.iter().find(|z| z.symbols == s).map(|z| z.label), Some(Label::Real(1.0)));
    }

    #[test]
    fn string_assign_example() {
        let t = builtin(&Builtin::StringAssignProgram).unwrap();
        // R="F";...print(R) -> F
        let s = Substitution::from_pairs(&[(0, 900), (1, 901), (2, 902), (3, 903)]);
        let (x, y) = substitute(&t.templates[0], &s).unwrap();
        assert_eq!(y, crate::templates::SampleLabel::Token(902));
        assert_eq!(x[0], 900);
        assert_eq!(*x.iter().rev().nth(1).unwrap(), 900);
        let (_, y) = substitute(&t.templates[1], &s).unwrap();
        assert_eq!(y, crate::templates::SampleLabel::Token(903));
    }

    #[test]
    fn program_rows_have_constant_length() {
        for b in [Builtin::PrintProgram, Builtin::StringAssignProgram] {
            let t = builtin(&b).unwrap();
            assert!(t.templates.iter().all(|z| z.len() == t.k()));
        }
        assert_eq!(builtin(&Builtin::PrintProgram).unwrap().k(), "a=1;b=-1;print(a)".len());
    }

    #[test]
    fn random_task_standardized() {
        let t = builtin(&Builtin::RandomTask {
            templates: 6,
            k: 4,
            wildcards: 2,
            regulars: 3,
            seed: 5,
        })
        .unwrap();
        let ys: Vec<f64> = (0..t.len()).map(|j| t.real_label(j).unwrap()).collect();
        let mean: f64 = ys.iter().zip(&t.weights).map(|(y, w)| y * w).sum();
        let var: f64 = ys.iter().zip(&t.weights).map(|(y, w)| w * (y - mean).powi(2)).sum();
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert!(t.check_disjoint().unwrap());
    }

    #[test]
    fn names_round_trip() {
        for b in [
            Builtin::SameDifferent,
            Builtin::Majority(5),
            Builtin::RandomTask {
                templates: 3,
                k: 2,
                wildcards: 1,
                regulars: 2,
                seed: 9,
            },
            Builtin::RavenDimension,
        ] {
            assert_eq!(b.to_string().parse::<Builtin>().unwrap(), b);
        }
        assert!("nope".parse::<Builtin>().is_err());
    }
}
