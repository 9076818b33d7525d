use serde::{Deserialize, Serialize};

use super::ab::AbResult;
use super::stats::{OverlapBins, WordStatsRow};
use crate::error::{Error, Result};
use crate::generator::{perplexity, GeneratorModel, Seq2SeqPair};
use crate::retnref::{source_registry, SOURCES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PplRow {
    pub source: String,
    pub ppl: f64,
    /// Rows whose retrieval reads the gold label; a sanity check only.
    pub label_dependent: bool,
}

/// Test perplexity of one generator per retrieval source, each evaluated on
/// its own augmented test inputs, in the given order.
pub fn ppl_rows(runs: &[(&str, &GeneratorModel, &[Seq2SeqPair])]) -> Result<Vec<PplRow>> {
    let registry = source_registry();
    runs.iter()
        .map(|(name, model, pairs)| {
            Ok(PplRow {
                source: name.to_string(),
                ppl: perplexity(model, pairs)?,
                label_dependent: registry.get(name)?.uses_label(),
            })
        })
        .collect()
}

/// [`ppl_rows`] over all five sources, from no retrieval to the gold label.
pub fn ppl_ablation(runs: &[(&str, &GeneratorModel, &[Seq2SeqPair])]) -> Result<Vec<PplRow>> {
    let mut ordered = Vec::with_capacity(SOURCES.len());
    for name in SOURCES {
        let run = runs
            .iter()
            .find(|(s, _, _)| *s == name)
            .ok_or_else(|| Error::invalid(format!("missing generator for source {name}")))?;
        ordered.push(*run);
    }
    ppl_rows(&ordered)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn render_ppl(rows: &[PplRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mark = if r.label_dependent { " *" } else { "" };
            vec![format!("{}{mark}", r.source), format!("{:.2}", r.ppl)]
        })
        .collect();
    let mut out = table(&["retrieval source", "PPL"], &body);
    out.push_str("* reads the gold label; sanity check only\n");
    out
}

pub fn render_word_stats(rows: &[WordStatsRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                format!("{:.1}", r.word_count),
                format!("{:.1}", r.char_count),
                format!("{:.1}%", r.rare_pct_100),
                format!("{:.1}%", r.rare_pct_1000),
            ]
        })
        .collect();
    table(&["method", "words", "chars", "rare<100", "rare<1k"], &body)
}

pub fn render_overlap(rows: &[(String, OverlapBins)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(m, b)| {
            let mut r = vec![m.clone()];
            r.extend(b.as_array().iter().map(|v| format!("{v:.0}%")));
            r
        })
        .collect();
    let mut out = table(&["method", "<30%", "30-60%", "60-80%", ">80%"], &body);
    out.push_str("bins: [0,.3) [.3,.6] (.6,.8] (.8,1]\n");
    out
}

pub fn render_ab(rows: &[(String, AbResult)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                format!("{:.2}%", 100.0 * r.win_rate),
                r.a_wins.to_string(),
                r.b_wins.to_string(),
                r.ties.to_string(),
                format!("{:.3}", r.p_value),
            ]
        })
        .collect();
    table(&["comparison (A vs B)", "win rate", "A wins", "B wins", "tie", "p"], &body)
}
