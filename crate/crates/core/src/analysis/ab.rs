use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of decisive judgments won by A; ties are excluded.
pub fn win_rate(a_wins: u64, b_wins: u64, _ties: u64) -> Result<f64> {
    let n = a_wins + b_wins;
    if n == 0 {
        return Err(Error::invalid("no decisive judgments"));
    }
    Ok(a_wins as f64 / n as f64)
}

/// Exact two-sided binomial test of `k` successes in `n` fair trials: the
/// total probability of outcomes no more likely than the observed one.
/// Point probabilities are accumulated in log space.
pub fn binomial_two_tailed(k: u64, n: u64) -> f64 {
    assert!(n >= 1 && k <= n, "binomial test needs 0 <= k <= n and n >= 1");
    let n_us = n as usize;
    let mut lp = Vec::with_capacity(n_us + 1);
    let mut cur = -(n as f64) * std::f64::consts::LN_2;
    lp.push(cur);
    for i in 1..=n_us {
        cur += ((n_us - i + 1) as f64).ln() - (i as f64).ln();
        lp.push(cur);
    }
    // Mirror the upper half so equal point probabilities compare exactly.
    for i in 0..=n_us / 2 {
        lp[n_us - i] = lp[i];
    }
    let observed = lp[k as usize];
    let cutoff = observed + 1e-9 * observed.abs().max(1.0);
    let kept: Vec<f64> = lp.into_iter().filter(|&v| v <= cutoff).collect();
    if kept.len() == n_us + 1 {
        return 1.0;
    }
    let m = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = m.exp() * kept.iter().map(|v| (v - m).exp()).sum::<f64>();
    p.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbResult {
    pub a_wins: u64,
    pub b_wins: u64,
    pub ties: u64,
    pub win_rate: f64,
    pub p_value: f64,
}

impl AbResult {
    pub fn from_counts(a_wins: u64, b_wins: u64, ties: u64) -> Result<Self> {
        let win_rate = win_rate(a_wins, b_wins, ties)?;
        Ok(AbResult {
            a_wins,
            b_wins,
            ties,
            win_rate,
            p_value: binomial_two_tailed(a_wins, a_wins + b_wins),
        })
    }
}
