use std::collections::BTreeSet;

use proptest::prelude::*;

use reltask::kernel::{gram, InnerProfile, Kernel, KernelSpec};
use reltask::model::{InitScheme, ModelConfig, Transformer};
use reltask::templates::{
    builtin, matches, sample_dataset, substitute, templates_disjoint, Alphabet, Builtin, Label, Substitution, Symbol,
    Template, Token,
};
use reltask::tensor::{Rng, Tensor};

/// Every injective map from the wildcards of `z` into `alphabet`, avoiding
/// the regular tokens of `z`, whose substituted string equals `x`.
fn brute_matches(x: &[Token], z: &Template, alphabet: &[Token]) -> Vec<Vec<(usize, Token)>> {
    let wild: Vec<usize> = z.wildcards().into_iter().collect();
    let regs = z.regulars();
    let pool: Vec<Token> = alphabet.iter().copied().filter(|t| !regs.contains(t)).collect();
    let mut found = Vec::new();
    let mut assign = vec![0usize; wild.len()];
    fn rec(
        i: usize,
        wild: &[usize],
        pool: &[Token],
        assign: &mut Vec<usize>,
        z: &Template,
        x: &[Token],
        found: &mut Vec<Vec<(usize, Token)>>,
    ) {
        if i == wild.len() {
            let ok = z.symbols.iter().zip(x).all(|(sym, &t)| match *sym {
                Symbol::Reg(r) => r == t,
                Symbol::Wild(w) => pool[assign[wild.iter().position(|&v| v == w).unwrap()]] == t,
            });
            if ok {
                found.push(wild.iter().zip(assign.iter()).map(|(&w, &a)| (w, pool[a])).collect());
            }
            return;
        }
        for a in 0..pool.len() {
            if assign[..i].contains(&a) {
                continue;
            }
            assign[i] = a;
            rec(i + 1, wild, pool, assign, z, x, found);
        }
    }
    rec(0, &wild, &pool, &mut assign, z, x, &mut found);
    found
}

/// Every string an admissible substitution of `z` produces over `alphabet`.
fn images(z: &Template, alphabet: &[Token]) -> Vec<Vec<Token>> {
    let wild: Vec<usize> = z.wildcards().into_iter().collect();
    let regs = z.regulars();
    let pool: Vec<Token> = alphabet.iter().copied().filter(|t| !regs.contains(t)).collect();
    let mut out = Vec::new();
    fn rec(z: &Template, wild: &[usize], pool: &[Token], pick: &mut Vec<Token>, out: &mut Vec<Vec<Token>>) {
        if pick.len() == wild.len() {
            out.push(
                z.symbols
                    .iter()
                    .map(|s| match *s {
                        Symbol::Reg(r) => r,
                        Symbol::Wild(w) => pick[wild.iter().position(|&v| v == w).unwrap()],
                    })
                    .collect(),
            );
            return;
        }
        for &t in pool {
            if !pick.contains(&t) {
                pick.push(t);
                rec(z, wild, pool, pick, out);
                pick.pop();
            }
        }
    }
    rec(z, &wild, &pool, &mut Vec::new(), &mut out);
    out
}

/// Whether `x` is an admissible substitution of `z`, from the definition.
fn produces(z: &Template, x: &[Token]) -> bool {
    let regs = z.regulars();
    let mut map = std::collections::BTreeMap::new();
    for (s, &t) in z.symbols.iter().zip(x) {
        match *s {
            Symbol::Reg(r) if r != t => return false,
            Symbol::Reg(_) => {}
            Symbol::Wild(w) => {
                if regs.contains(&t) || *map.entry(w).or_insert(t) != t {
                    return false;
                }
            }
        }
    }
    map.values().collect::<BTreeSet<_>>().len() == map.len()
}

fn symbol() -> impl Strategy<Value = Symbol> {
    prop_oneof![(0usize..5).prop_map(Symbol::Reg), (0usize..4).prop_map(Symbol::Wild)]
}

fn template(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Template> {
    prop::collection::vec(symbol(), k).prop_map(|s| Template::new(s, Label::Real(0.0)))
}

fn pairs(s: &Substitution) -> Vec<(usize, Token)> {
    s.iter().collect()
}

proptest! {
    #[test]
    fn substitute_then_match_round_trips(z in template(1..=6), seed in any::<u64>()) {
        let regs = z.regulars();
        let mut pool: Vec<Token> = (0..40).filter(|t| !regs.contains(t)).collect();
        Rng::new(seed).shuffle(&mut pool);
        let s = Substitution::from_pairs(
            &z.wildcards().into_iter().zip(pool).collect::<Vec<_>>(),
        );
        let (x, _) = substitute(&z, &s).unwrap();
        prop_assert_eq!(matches(&x, &z).unwrap().map(|m| pairs(&m)), Some(pairs(&s)));
    }

    #[test]
    fn matches_agrees_with_brute_force(z in template(1..=4), x in prop::collection::vec(0usize..5, 4)) {
        let x = &x[..z.len()];
        let alphabet: Vec<Token> = (0..5).collect();
        let brute = brute_matches(x, &z, &alphabet);
        prop_assert!(brute.len() <= 1);
        prop_assert_eq!(matches(x, &z).unwrap().map(|m| pairs(&m)), brute.into_iter().next());
    }

    #[test]
    fn disjointness_agrees_with_brute_force(
        (z1, z2) in (1usize..=5).prop_flat_map(|k| (template(k..=k), template(k..=k)))
    ) {
        let k = z1.len();
        let mut alphabet: BTreeSet<Token> = z1.regulars().union(&z2.regulars()).copied().collect();
        alphabet.extend(100..100 + k);
        let alphabet: Vec<Token> = alphabet.into_iter().collect();
        let common = images(&z1, &alphabet).iter().any(|x| produces(&z2, x));
        prop_assert_eq!(templates_disjoint(&z1, &z2).unwrap(), !common);
    }

    #[test]
    fn kernels_are_token_symmetric(
        k in 1usize..5,
        raw in prop::collection::vec((0usize..8, 0usize..8), 4),
        perm in Just((0usize..8).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let x: Vec<Token> = raw[..k].iter().map(|p| p.0).collect();
        let y: Vec<Token> = raw[..k].iter().map(|p| p.1).collect();
        let px: Vec<Token> = x.iter().map(|&t| perm[t]).collect();
        let py: Vec<Token> = y.iter().map(|&t| perm[t]).collect();
        let specs = [
            KernelSpec::Attn { beta: 0.7, gamma: 0.4, n_samples: 64, seed: 3 },
            KernelSpec::trans(0.5, 0.5, 1.0, 0.3, 1).with_samples(64),
            KernelSpec::mlp(),
            KernelSpec::InnerProduct { profile: InnerProfile::Exp },
        ];
        for spec in specs {
            // fresh kernels so the cache cannot hide a difference
            let a = Kernel::new(spec.clone()).unwrap().eval(&x, &y).unwrap();
            let b = Kernel::new(spec.clone()).unwrap().eval(&px, &py).unwrap();
            let c = Kernel::new(spec).unwrap().eval(&y, &x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, c);
        }
    }

    #[test]
    fn transformer_is_token_symmetric_under_coupled_permutation(
        seed in any::<u64>(),
        perm in Just((0usize..7).collect::<Vec<_>>()).prop_shuffle(),
        xs in prop::collection::vec(prop::collection::vec(0usize..7, 3), 1..4),
    ) {
        let cfg = ModelConfig { attn_identity: true, value_identity: true, ..ModelConfig::regression(3, 7, 6, 3, 2, 4) };
        let mut t = Transformer::init(cfg, seed, InitScheme::Standard).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        for l in &mut t.params.layers {
            l.a = Tensor::randn(l.a.shape(), 0.5, &mut rng);
            l.b = Tensor::randn(l.b.shape(), 0.5, &mut rng);
        }
        let mut u = t.clone();
        let mut we = Tensor::zeros(&[7, 6]);
        for (i, &pi) in perm.iter().enumerate() {
            for c in 0..6 {
                we.set(&[pi, c], t.params.w_e.at(&[i, c]));
            }
        }
        u.params.w_e = we;
        let pxs: Vec<Vec<Token>> = xs.iter().map(|x| x.iter().map(|&i| perm[i]).collect()).collect();
        prop_assert_eq!(t.predict(&xs).unwrap(), u.predict(&pxs).unwrap());
    }

    #[test]
    fn same_seed_same_bits(seed in any::<u64>(), n in 1usize..64) {
        let a = Rng::new(seed).normals(n);
        let b = Rng::new(seed).normals(n);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn gram_is_symmetric_and_shift_positive() {
    let task = builtin(&Builtin::SameDifferent).unwrap().with_vocab_size(200).unwrap().with_cls();
    for seed in 0..3 {
        let ds = sample_dataset(&task, 40, &Alphabet::new(task.free_tokens()[..40].to_vec()), seed).unwrap();
        for spec in [KernelSpec::mlp(), KernelSpec::trans(0.5, 0.5, 1.0, 0.3, seed)] {
            let g = gram(&Kernel::new(spec).unwrap(), &ds.inputs(), None).unwrap();
            assert!(g.max_asymmetry() <= 1e-9);
            for lambda in [1e-3, 1.0, 10.0] {
                assert!(g.min_eigenvalue(lambda).unwrap() >= lambda - 1e-9);
            }
        }
    }
}

#[test]
fn builtin_binary_tasks_are_pairwise_disjoint() {
    for b in [Builtin::SameDifferent, Builtin::AbaVsAbb, Builtin::AbabVsAabb, Builtin::Majority(3), Builtin::Majority(5)] {
        let t = builtin(&b).unwrap();
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                assert!(templates_disjoint(&t.templates[i], &t.templates[j]).unwrap(), "{b}: {i} vs {j}");
            }
        }
        assert!(t.check_disjoint().unwrap());
    }
}
