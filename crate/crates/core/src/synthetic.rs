//! Seeded generators for synthetic "similar language" corpora.
//!
//! Chains built by [`similar_chains`] have doubly stochastic transition
//! matrices and a uniform start distribution, so every chain has the same
//! uniform character marginal at every position. Only transitions differ,
//! which a unigram model cannot see.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Instance, Label};
use crate::error::Result;

/// Order-1 character Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub alphabet: Vec<char>,
    pub start: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> String {
        let start = WeightedIndex::new(&self.start).expect("valid start weights");
        let rows: Vec<WeightedIndex<f64>> = self
            .transitions
            .iter()
            .map(|r| WeightedIndex::new(r).expect("valid transition row"))
            .collect();
        let mut out = String::with_capacity(len);
        let mut state = start.sample(rng);
        for i in 0..len {
            if i > 0 {
                state = rows[state].sample(rng);
            }
            out.push(self.alphabet[state]);
        }
        out
    }

    /// Column sums of the transition matrix; all 1 for a doubly stochastic chain.
    pub fn column_sums(&self) -> Vec<f64> {
        let k = self.alphabet.len();
        (0..k).map(|j| self.transitions.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Random doubly stochastic `k x k` matrix: a convex mix of `perms` random
/// permutation matrices.
pub fn doubly_stochastic(k: usize, perms: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let weights: Vec<f64> = (0..perms).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut m = vec![vec![0.0; k]; k];
    for w in weights {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(rng);
        for (i, &j) in perm.iter().enumerate() {
            m[i][j] += w / total;
        }
    }
    m
}

/// `count` chains over one alphabet with identical uniform marginals and
/// independently drawn transition tables.
pub fn similar_chains(count: usize, alphabet: &[char], seed: u64) -> Vec<MarkovChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = alphabet.len();
    (0..count)
        .map(|_| MarkovChain {
            alphabet: alphabet.to_vec(),
            start: vec![1.0 / k as f64; k],
            transitions: doubly_stochastic(k, 3, &mut rng),
        })
        .collect()
}

/// `per_label` texts of `len` characters from each chain, labelled by
/// `codes`, interleaved label by label.
pub fn markov_corpus(
    chains: &[MarkovChain],
    codes: &[&str],
    per_label: usize,
    len: usize,
    seed: u64,
) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = codes.iter().map(|c| Label::new(*c)).collect::<Result<Vec<_>>>()?;
    let mut instances = Vec::with_capacity(per_label * chains.len());
    for _ in 0..per_label {
        for (chain, label) in chains.iter().zip(&labels) {
            instances.push(Instance {
                text: chain.sample(len, &mut rng),
                label: label.clone(),
            });
        }
    }
    Ok(Corpus::from_instances(instances))
}

/// Uniformly random text over `alphabet`.
pub fn random_text(alphabet: &[char], len: usize, rng: &mut impl Rng) -> String {
    (0..len).map(|_| *alphabet.choose(rng).expect("non-empty alphabet")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_are_doubly_stochastic() {
        for chain in similar_chains(3, &['a', 'b', 'c', 'd', 'e', 'f'], 11) {
            for row in &chain.transitions {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for col in chain.column_sums() {
                assert!((col - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corpus_is_seeded() {
        let chains = similar_chains(2, &['x', 'y'], 1);
        let a = markov_corpus(&chains, &["p", "q"], 5, 20, 3).unwrap();
        let b = markov_corpus(&chains, &["p", "q"], 5, 20, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.instances().iter().all(|i| i.text.chars().count() == 20));
    }
}
