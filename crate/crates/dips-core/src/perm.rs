//! Permutations of `{0, .., n-1}` (printed and parsed 1-based).

use rand::Rng;

use crate::{Error, Result};

/// A bijection on `{0, .., n-1}`, stored as `mapping[pos] = value`.
///
/// The mathematical convention in reports and file formats is 1-based
/// (`pi(i) in {1..n}`); in memory everything is 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    /// Identity permutation of size `n`.
    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    /// Build from a 0-based image vector, validating bijectivity.
    pub fn from_vec(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &v in &mapping {
            if v >= n {
                return Err(Error::InvalidPermutation(format!(
                    "value {} out of range for n = {}",
                    v, n
                )));
            }
            if seen[v] {
                return Err(Error::InvalidPermutation(format!("value {} repeated", v)));
            }
            seen[v] = true;
        }
        Ok(Permutation { mapping })
    }

    /// Build from 1-based values `{1..n}`.
    pub fn from_one_based(values: &[usize]) -> Result<Self> {
        let mapping = values
            .iter()
            .map(|&v| {
                v.checked_sub(1).ok_or_else(|| {
                    Error::InvalidPermutation("1-based entry must be >= 1".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(mapping)
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// Image of position `pos` (0-based).
    #[inline]
    pub fn image(&self, pos: usize) -> usize {
        self.mapping[pos]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    /// 1-based copy of the mapping, for display and serialization.
    pub fn to_one_based(&self) -> Vec<usize> {
        self.mapping.iter().map(|&v| v + 1).collect()
    }

    /// Inverse permutation: `inv.image(v) = pos` whenever `self.image(pos) = v`.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (pos, &v) in self.mapping.iter().enumerate() {
            inv[v] = pos;
        }
        Permutation { mapping: inv }
    }

    /// Swap the images at two positions in place.
    pub fn swap_positions(&mut self, i: usize, j: usize) {
        self.mapping.swap(i, j);
    }

    /// Uniform sample via the Fisher-Yates shuffle: position `i` is swapped
    /// with a uniform position in `{i, .., n-1}`. Exactly uniform over the
    /// symmetric group given a uniform integer source, and deterministic
    /// for a fixed generator state.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Permutation {
        let mut mapping: Vec<usize> = (0..n).collect();
        fisher_yates(rng, &mut mapping);
        Permutation { mapping }
    }
}

/// In-place Fisher-Yates shuffle over an arbitrary slice.
pub fn fisher_yates<R: Rng + ?Sized, T>(rng: &mut R, slice: &mut [T]) {
    let n = slice.len();
    for i in 0..n.saturating_sub(1) {
        let j = rng.random_range(i..n);
        slice.swap(i, j);
    }
}

/// Iterator over all permutations of size `n` by Heap's algorithm.
///
/// Yields each arrangement exactly once; intended for exhaustive small-n
/// oracles (`n!` grows fast — callers cap `n`).
pub struct AllPermutations {
    state: Vec<usize>,
    counters: Vec<usize>,
    depth: usize,
    first: bool,
    done: bool,
}

impl AllPermutations {
    pub fn new(n: usize) -> Self {
        AllPermutations {
            state: (0..n).collect(),
            counters: vec![0; n],
            depth: 0,
            first: true,
            done: n == 0,
        }
    }
}

impl Iterator for AllPermutations {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        if self.done {
            return None;
        }
        if self.first {
            self.first = false;
            return Some(Permutation {
                mapping: self.state.clone(),
            });
        }
        let n = self.state.len();
        while self.depth < n {
            if self.counters[self.depth] < self.depth {
                if self.depth.is_multiple_of(2) {
                    self.state.swap(0, self.depth);
                } else {
                    self.state.swap(self.counters[self.depth], self.depth);
                }
                self.counters[self.depth] += 1;
                self.depth = 0;
                return Some(Permutation {
                    mapping: self.state.clone(),
                });
            } else {
                self.counters[self.depth] = 0;
                self.depth += 1;
            }
        }
        self.done = true;
        None
    }
}

/// `n!` as `u64`; panics beyond 20 (enumeration never goes near that).
pub fn factorial(n: usize) -> u64 {
    assert!(n <= 20, "factorial overflow");
    (1..=n as u64).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Permutation::from_vec(vec![0, 0]).is_err());
        assert!(Permutation::from_vec(vec![0, 2]).is_err());
        assert!(Permutation::from_vec(vec![2, 0, 1]).is_ok());
    }

    #[test]
    fn inverse_roundtrip() {
        let p = Permutation::from_vec(vec![2, 0, 3, 1]).unwrap();
        let inv = p.inverse();
        for pos in 0..4 {
            assert_eq!(inv.image(p.image(pos)), pos);
        }
    }

    #[test]
    fn heap_enumerates_all() {
        for n in 0..=6 {
            let seen: HashSet<Vec<usize>> = AllPermutations::new(n)
                .map(|p| p.as_slice().to_vec())
                .collect();
            let expect = if n == 0 { 0 } else { factorial(n) as usize };
            assert_eq!(seen.len(), expect);
        }
    }

    #[test]
    fn sample_n1_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(Permutation::sample(&mut rng, 1).as_slice(), &[0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            assert_eq!(
                Permutation::sample(&mut r1, 9),
                Permutation::sample(&mut r2, 9)
            );
        }
    }
}
