use std::collections::{BTreeMap, BTreeSet};

use super::{Substitution, Symbol, Template, Token};
use crate::error::{Error, Result};

/// The unique substitution `s` with `x = sub(z, s)`, if one exists.
pub fn matches(x: &[Token], z: &Template) -> Result<Option<Substitution>> {
    if x.len() != z.len() {
        return Err(Error::Contract(format!(
            "string of length {} matched against template of length {}",
            x.len(),
            z.len()
        )));
    }
    let mut s: BTreeMap<usize, Token> = BTreeMap::new();
    for (&t, sym) in x.iter().zip(&z.symbols) {
        match *sym {
            Symbol::Reg(r) => {
                if r != t {
                    return Ok(None);
                }
            }
            Symbol::Wild(w) => match s.get(&w) {
                Some(&bound) if bound != t => return Ok(None),
                Some(_) => {}
                None => {
                    s.insert(w, t);
                }
            },
        }
    }
    let range: BTreeSet<Token> = s.values().copied().collect();
    if range.len() != s.len() {
        return Ok(None);
    }
    let regs = z.regulars();
    if range.iter().any(|t| regs.contains(t)) {
        return Ok(None);
    }
    let mut out = Substitution::new();
    for (w, t) in s {
        out.bind(w, t);
    }
    Ok(Some(out))
}

// Binding state for one side of the unification.
struct Side<'a> {
    z: &'a Template,
    regs: BTreeSet<Token>,
    map: BTreeMap<usize, Token>,
    used: BTreeSet<Token>,
}

impl<'a> Side<'a> {
    fn new(z: &'a Template) -> Self {
        Side {
            z,
            regs: z.regulars(),
            map: BTreeMap::new(),
            used: BTreeSet::new(),
        }
    }

    fn can_bind(&self, t: Token) -> bool {
        !self.regs.contains(&t) && !self.used.contains(&t)
    }

    fn bind(&mut self, w: usize, t: Token) {
        self.map.insert(w, t);
        self.used.insert(t);
    }

    fn unbind(&mut self, w: usize) {
        if let Some(t) = self.map.remove(&w) {
            self.used.remove(&t);
        }
    }
}

/// True iff no string matches both templates.
///
/// Searches position by position for a common string. Tokens are drawn from
/// the regular tokens of either template plus fresh tokens; fresh tokens
/// are interchangeable, so only already-used ones and a single new one are
/// tried at each step.
pub fn templates_disjoint(z1: &Template, z2: &Template) -> Result<bool> {
    if z1.len() != z2.len() {
        return Err(Error::Contract(format!(
            "templates of lengths {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    let regulars: Vec<Token> = z1.regulars().union(&z2.regulars()).copied().collect();
    let first_fresh = regulars.iter().max().map_or(0, |m| m + 1);
    let mut a = Side::new(z1);
    let mut b = Side::new(z2);
    Ok(!unify(0, &mut a, &mut b, &regulars, first_fresh, first_fresh))
}

fn resolve(side: &Side, i: usize) -> std::result::Result<Token, usize> {
    match side.z.symbols[i] {
        Symbol::Reg(t) => Ok(t),
        Symbol::Wild(w) => side.map.get(&w).copied().ok_or(w),
    }
}

fn unify(
    i: usize,
    a: &mut Side,
    b: &mut Side,
    regulars: &[Token],
    first_fresh: Token,
    next_fresh: Token,
) -> bool {
    if i == a.z.len() {
        return true;
    }
    match (resolve(a, i), resolve(b, i)) {
        (Ok(t1), Ok(t2)) => t1 == t2 && unify(i + 1, a, b, regulars, first_fresh, next_fresh),
        (Ok(t), Err(w)) => {
            if !b.can_bind(t) {
                return false;
            }
            b.bind(w, t);
            let ok = unify(i + 1, a, b, regulars, first_fresh, next_fresh);
            b.unbind(w);
            ok
        }
        (Err(w), Ok(t)) => {
            if !a.can_bind(t) {
                return false;
            }
            a.bind(w, t);
            let ok = unify(i + 1, a, b, regulars, first_fresh, next_fresh);
            a.unbind(w);
            ok
        }
        (Err(w1), Err(w2)) => {
            let candidates = regulars
                .iter()
                .copied()
                .chain(first_fresh..=next_fresh);
            for t in candidates {
                if !a.can_bind(t) || !b.can_bind(t) {
                    continue;
                }
                a.bind(w1, t);
                b.bind(w2, t);
                let nf = if t == next_fresh { next_fresh + 1 } else { next_fresh };
                let ok = unify(i + 1, a, b, regulars, first_fresh, nf);
                a.unbind(w1);
                b.unbind(w2);
                if ok {
                    return true;
                }
            }
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::Label;

    fn t(p: &str) -> Template {
        Template::parse(p, Label::Real(0.0))
    }

    // Q=5, R=6, S=7, T=8; template regulars S and T are 7 and 8.
    fn qqrst_template() -> Template {
        Template::new(
            vec![
                Symbol::Wild(0),
                Symbol::Wild(0),
                Symbol::Wild(1),
                Symbol::Reg(7),
                Symbol::Reg(8),
            ],
            Label::Real(1.0),
        )
    }

    #[test]
    fn matches_qqrst() {
        let z = qqrst_template();
        let s = matches(&[5, 5, 6, 7, 8], &z).unwrap().unwrap();
        assert_eq!(s, Substitution::from_pairs(&[(0, 5), (1, 6)]));
    }

    #[test]
    fn rejects_non_injective() {
        assert!(matches(&[5, 5, 5, 7, 8], &qqrst_template()).unwrap().is_none());
    }

    #[test]
    fn rejects_range_overlapping_regulars() {
        assert!(matches(&[5, 5, 7, 7, 8], &qqrst_template()).unwrap().is_none());
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches(&[1, 2], &t("abc")).is_err());
        assert!(templates_disjoint(&t("ab"), &t("abc")).is_err());
    }

    #[test]
    fn disjointness_basics() {
        assert!(templates_disjoint(&t("aa"), &t("ab")).unwrap());
        assert!(!templates_disjoint(&t("ab"), &t("ab")).unwrap());
        assert!(templates_disjoint(&t("aba"), &t("abb")).unwrap());
        assert!(!templates_disjoint(&t("ab"), &t("1b")).unwrap());
        assert!(templates_disjoint(&t("a1"), &t("1a")).unwrap());
        assert!(!templates_disjoint(&t("a1"), &t("ab")).unwrap());
        assert!(!templates_disjoint(&t("111"), &t("111")).unwrap());
    }
}
