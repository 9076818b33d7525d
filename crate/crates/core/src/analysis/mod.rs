//! Evaluation statistics: perplexity ablation, output word statistics,
//! retrieval overlap bins, A/B win rates with exact binomial p-values.

mod ab;
mod report;
mod stats;

pub use ab::{binomial_two_tailed, win_rate, AbResult};
pub use report::{ppl_ablation, ppl_rows, render_ab, render_overlap, render_ppl, render_word_stats, PplRow};
pub use stats::{bin_of, bins_from_overlaps, overlap_bins, word_stats, word_stats_with, OverlapBins, WordStatsRow};
