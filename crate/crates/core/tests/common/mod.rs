#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnr_core::corpus::{Corpus, Dialogue, Speaker, Split, TokenId, Turn, Vocab};
use rnr_core::generator::Seq2SeqPair;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// One dialogue per entry, turns alternating from P1.
pub fn corpus_of(dialogues: &[&[&str]]) -> Corpus {
    Corpus {
        split: Split::Train,
        dialogues: dialogues
            .iter()
            .map(|turns| Dialogue {
                persona_self: vec![],
                persona_partner: vec![],
                turns: turns
                    .iter()
                    .enumerate()
                    .map(|(i, t)| Turn::new(if i % 2 == 0 { Speaker::P1 } else { Speaker::P2 }, t))
                    .collect(),
            })
            .collect(),
    }
}

/// Vocabulary of `n` words `w0 .. w{n-1}`.
pub fn word_vocab(n: usize) -> Vocab {
    let line: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    Vocab::build(&corpus_of(&[&[&line.join(" ")]]), 1).unwrap()
}

/// `n` random sequences of `lens` ordinary tokens whose target equals the
/// input.
pub fn copy_pairs(vocab: &Vocab, n: usize, lens: std::ops::RangeInclusive<usize>, seed: u64) -> Vec<Seq2SeqPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rnr_core::corpus::RESERVED.len() as TokenId;
    (0..n)
        .map(|_| {
            let len = rng.gen_range(lens.clone());
            let seq: Vec<TokenId> = (0..len)
                .map(|_| rng.gen_range(first..vocab.len() as TokenId))
                .collect();
            Seq2SeqPair {
                input: seq.clone(),
                target: seq,
            }
        })
        .collect()
}
