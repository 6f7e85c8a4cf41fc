//! MinHash signatures over word sets.
//!
//! Each of the `n` permutations is a universal hash `(a·x + b) mod p` over the
//! Mersenne prime `p = 2^61 - 1`, applied to a 64-bit FNV-1a hash of the word.
//! Two texts are duplicates when their full signatures are identical.

use std::collections::HashSet;

use rand::Rng;

use crate::numerics::rng_from_seed;

const MERSENNE_61: u64 = (1 << 61) - 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(num_permutations: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let coeffs = (0..num_permutations)
            .map(|_| {
                (
                    rng.random_range(1..MERSENNE_61),
                    rng.random_range(0..MERSENNE_61),
                )
            })
            .collect();
        Self { coeffs }
    }

    pub fn num_permutations(&self) -> usize {
        self.coeffs.len()
    }

    pub fn signature(&self, text: &str) -> Vec<u64> {
        let words: HashSet<&str> = text.split_whitespace().collect();
        let bases: Vec<u64> = words
            .iter()
            .map(|w| fnv1a(w.as_bytes()) % MERSENNE_61)
            .collect();
        self.coeffs
            .iter()
            .map(|&(a, b)| {
                bases
                    .iter()
                    .map(|&x| {
                        ((u128::from(a) * u128::from(x) + u128::from(b)) % u128::from(MERSENNE_61))
                            as u64
                    })
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect()
    }
}

/// Indices of the first text carrying each distinct signature.
pub fn unique_by_signature<S: AsRef<str>>(texts: &[S], hasher: &MinHasher) -> Vec<usize> {
    let mut seen = HashSet::new();
    texts
        .iter()
        .enumerate()
        .filter(|(_, t)| seen.insert(hasher.signature(t.as_ref())))
        .map(|(i, _)| i)
        .collect()
}
