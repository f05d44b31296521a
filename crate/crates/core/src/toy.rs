//! Synthetic data: a one-to-one bilingual lexicon, word-for-word translated
//! phrase pairs, and small random problems for gradient checking.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{PhrasePair, RawPair, Vocabulary};
use crate::error::Result;
use crate::objective::{sample_all_negatives, TrainingInstance};
use crate::params::{Dims, ModelParams};

/// `source[i]` translates to `target[i]`.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl Lexicon {
    pub fn new(size: usize) -> Self {
        Lexicon {
            source: (0..size).map(|i| format!("src{i:03}")).collect(),
            target: (0..size).map(|i| format!("tgt{i:03}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// A random source phrase with `len` words and its word-for-word
    /// translation; with probability `reorder` two adjacent target words swap.
    pub fn sample_pair<R: Rng + ?Sized>(&self, len: usize, reorder: f64, rng: &mut R) -> RawPair {
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..self.len())).collect();
        let source = ids.iter().map(|&i| self.source[i].clone()).collect();
        let mut target: Vec<String> = ids.iter().map(|&i| self.target[i].clone()).collect();
        if len > 1 && rng.random_bool(reorder) {
            let k = rng.random_range(0..len - 1);
            target.swap(k, k + 1);
        }
        RawPair { source, target }
    }

    pub fn random_target_phrase<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<String> {
        (0..len)
            .map(|_| self.target.choose(rng).expect("non-empty lexicon").clone())
            .collect()
    }

    /// `count` pairs with lengths uniform in `min_len..=max_len`.
    pub fn corpus<R: Rng + ?Sized>(
        &self,
        count: usize,
        min_len: usize,
        max_len: usize,
        reorder: f64,
        rng: &mut R,
    ) -> Vec<RawPair> {
        (0..count)
            .map(|_| {
                let len = rng.random_range(min_len..=max_len);
                self.sample_pair(len, reorder, rng)
            })
            .collect()
    }
}

/// Writes pairs in the ` ||| ` corpus format.
pub fn to_corpus_text(pairs: &[RawPair]) -> String {
    pairs.iter().map(|p| p.to_line() + "\n").collect()
}

/// A small random gradient-check problem: `instances` pairs of random
/// phrases with lengths in `1..=max_len` over `vocab_size` ids per side
/// (id 0 is `<unk>` and is never sampled), with frozen negatives, and a
/// model whose N(0, 0.01²) draws are multiplied by `scale`.
pub fn tiny_problem<R: Rng + ?Sized>(
    dims: Dims,
    vocab_size: usize,
    instances: usize,
    max_len: usize,
    scale: f64,
    rng: &mut R,
) -> Result<(Vec<TrainingInstance>, ModelParams)> {
    let vocab = Vocabulary::from_tokens((1..vocab_size).map(|i| format!("w{i}")));
    let mut model = ModelParams::random(dims, vocab_size, vocab_size, rng);
    for block in model.blocks_mut() {
        block.iter_mut().for_each(|v| *v *= scale);
    }
    let pairs: Vec<PhrasePair> = (0..instances)
        .map(|_| {
            let phrase = |rng: &mut R| -> Vec<usize> {
                let len = rng.random_range(1..=max_len);
                (0..len).map(|_| rng.random_range(1..vocab_size)).collect()
            };
            let s = phrase(rng);
            let t = phrase(rng);
            PhrasePair::new(s, t)
        })
        .collect::<Result<_>>()?;
    let inst = sample_all_negatives(&pairs, &vocab, &vocab, rng)?;
    Ok((inst, model))
}
