use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, tokenize, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::retnref::word_overlap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordStatsRow {
    pub method: String,
    pub word_count: f64,
    /// Characters of the space-joined token string, spaces included.
    pub char_count: f64,
    /// Percent of tokens seen fewer than 100 times in training.
    pub rare_pct_100: f64,
    pub rare_pct_1000: f64,
}

/// Length and rare-word statistics, with frequencies from `freq`.
pub fn word_stats_with(method: &str, utterances: &[String], freq: impl Fn(&str) -> u64) -> Result<WordStatsRow> {
    if utterances.is_empty() {
        return Err(Error::Empty("utterance list"));
    }
    let (mut words, mut chars, mut r100, mut r1000) = (0usize, 0usize, 0usize, 0usize);
    for u in utterances {
        let toks = tokenize(u);
        chars += detokenize(&toks).chars().count();
        words += toks.len();
        for t in &toks {
            let f = freq(t);
            r100 += usize::from(f < 100);
            r1000 += usize::from(f < 1000);
        }
    }
    let n = utterances.len() as f64;
    let pct = |c: usize| if words == 0 { 0.0 } else { 100.0 * c as f64 / words as f64 };
    Ok(WordStatsRow {
        method: method.to_string(),
        word_count: words as f64 / n,
        char_count: chars as f64 / n,
        rare_pct_100: pct(r100),
        rare_pct_1000: pct(r1000),
    })
}

/// [`word_stats_with`] against the training frequencies kept by `vocab`.
pub fn word_stats(method: &str, utterances: &[String], vocab: &Vocab) -> Result<WordStatsRow> {
    word_stats_with(method, utterances, |t| vocab.frequency(t))
}

/// Overlap histogram over `<30%`, `30-60%`, `60-80%`, `>80%`. The inner
/// bounds follow the copy rule's strict threshold: `[0, .3)`, `[.3, .6]`,
/// `(.6, .8]`, `(.8, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapBins {
    pub below_30: f64,
    pub from_30_to_60: f64,
    pub from_60_to_80: f64,
    pub above_80: f64,
}

impl OverlapBins {
    pub fn as_array(&self) -> [f64; 4] {
        [self.below_30, self.from_30_to_60, self.from_60_to_80, self.above_80]
    }
}

pub fn bin_of(overlap: f64) -> usize {
    if overlap < 0.3 {
        0
    } else if overlap <= 0.6 {
        1
    } else if overlap <= 0.8 {
        2
    } else {
        3
    }
}

pub fn bins_from_overlaps(overlaps: &[f64]) -> Result<OverlapBins> {
    if overlaps.is_empty() {
        return Err(Error::Empty("overlap pairs"));
    }
    let mut counts = [0usize; 4];
    for &o in overlaps {
        counts[bin_of(o)] += 1;
    }
    let pct = |c: usize| 100.0 * c as f64 / overlaps.len() as f64;
    Ok(OverlapBins {
        below_30: pct(counts[0]),
        from_30_to_60: pct(counts[1]),
        from_60_to_80: pct(counts[2]),
        above_80: pct(counts[3]),
    })
}

/// Bins the word overlap of each `(generated, retrieved)` pair.
pub fn overlap_bins(pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<OverlapBins> {
    let overlaps = pairs
        .iter()
        .map(|(g, r)| word_overlap(g, r))
        .collect::<Result<Vec<_>>>()?;
    bins_from_overlaps(&overlaps)
}
