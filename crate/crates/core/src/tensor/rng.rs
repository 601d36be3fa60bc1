//! Seeded random streams.
//!
//! Streams are ChaCha8 keyed by a 64-bit seed. Child streams get their own
//! seed by mixing the parent seed with a label, so a sweep cell or a Gram
//! entry can own an independent stream without coordinating with siblings.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label (FNV-1a over the
/// label, then two rounds of SplitMix64 finalization).
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(parent) ^ h)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position of the block counter inside the stream (in 32-bit words).
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn child(&self, label: &str) -> Rng {
        Rng::new(derive_seed(self.seed, label))
    }

    pub fn child_indexed(&self, label: &str, index: u64) -> Rng {
        Rng::new(splitmix(derive_seed(self.seed, label) ^ splitmix(index)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform integer in 0..n. Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `count` distinct indices from 0..n in random order.
    pub fn distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} distinct values from {n}");
        // partial Fisher-Yates over a sparse swap table
        let mut swapped = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let j = i + self.below(n - i);
            let vj = *swapped.get(&j).unwrap_or(&j);
            let vi = *swapped.get(&i).unwrap_or(&i);
            swapped.insert(j, vi);
            out.push(vj);
        }
        out
    }

    /// Index drawn from a discrete distribution given by nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.counter(), b.counter());
    }

    #[test]
    fn children_differ_by_label() {
        let r = Rng::new(1);
        assert_ne!(r.child("a").next_u64(), r.child("b").next_u64());
        assert_eq!(r.child("a").next_u64(), r.child("a").next_u64());
        assert_ne!(
            r.child_indexed("x", 0).next_u64(),
            r.child_indexed("x", 1).next_u64()
        );
    }

    #[test]
    fn distinct_is_distinct() {
        let mut r = Rng::new(3);
        for _ in 0..50 {
            let mut d = r.distinct(10, 7);
            assert!(d.iter().all(|&x| x < 10));
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 7);
        }
    }

    #[test]
    fn categorical_respects_zero_weight() {
        let mut r = Rng::new(9);
        for _ in 0..200 {
            assert_ne!(r.categorical(&[0.5, 0.0, 0.5]), 1);
        }
    }
}
