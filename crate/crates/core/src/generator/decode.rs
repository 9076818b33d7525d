use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{DecoderState, GeneratorModel, StepDecoder};
use crate::corpus::{TokenId, BOS, EOS, PAD, SEP};
use crate::error::{Error, Result};
use crate::registry::Registry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Registered decoder name: `greedy` or `beam`.
    pub mode: String,
    pub beam_width: usize,
    pub max_decode_tokens: usize,
    /// Beam scores are `logp / len^length_penalty`; 0 disables it.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: "greedy".into(),
            beam_width: 4,
            max_decode_tokens: 24,
            length_penalty: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_decode_tokens == 0 {
            return Err(Error::invalid("beam_width and max_decode_tokens must be at least 1"));
        }
        Ok(())
    }
}

pub trait Decoder: Send + Sync {
    /// Response tokens for `context`, without BOS or EOS.
    fn decode(&self, model: &GeneratorModel, context: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>>;
}

/// Tokens the decoder may emit at `step`. PAD, BOS and SEP never appear in
/// output; EOS is held back at the first step so responses are non-empty.
fn allowed(token: usize, step: usize) -> bool {
    let t = token as TokenId;
    !(t == PAD || t == BOS || t == SEP || (t == EOS && step == 0))
}

pub struct Greedy;

impl Decoder for Greedy {
    fn decode(&self, model: &GeneratorModel, context: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>> {
        cfg.validate()?;
        let mut dec = StepDecoder::new(model, context)?;
        let mut state = dec.initial_state();
        let mut prev = BOS;
        let mut out = Vec::new();
        for step in 0..cfg.max_decode_tokens {
            let (lp, next, _) = dec.step(&state, prev)?;
            let mut best: Option<(usize, f64)> = None;
            for (t, &v) in lp.iter().enumerate() {
                if allowed(t, step) && best.map_or(true, |(_, b)| v > b) {
                    best = Some((t, v));
                }
            }
            let tok = best.expect("vocabulary has emittable tokens").0 as TokenId;
            if tok == EOS {
                break;
            }
            out.push(tok);
            state = next;
            prev = tok;
        }
        Ok(out)
    }
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    logp: f64,
    state: DecoderState,
    done: bool,
}

impl Hyp {
    fn score(&self, penalty: f64) -> f64 {
        if penalty == 0.0 {
            self.logp
        } else {
            self.logp / ((self.tokens.len() + 1) as f64).powf(penalty)
        }
    }
}

pub struct Beam;

impl Decoder for Beam {
    fn decode(&self, model: &GeneratorModel, context: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>> {
        cfg.validate()?;
        let width = cfg.beam_width;
        let mut dec = StepDecoder::new(model, context)?;
        let mut beam = vec![Hyp {
            tokens: Vec::new(),
            logp: 0.0,
            state: dec.initial_state(),
            done: false,
        }];
        for step in 0..cfg.max_decode_tokens {
            if beam.iter().all(|h| h.done) {
                break;
            }
            let mut pool: Vec<Hyp> = Vec::new();
            for h in &beam {
                if h.done {
                    pool.push(h.clone());
                    continue;
                }
                let prev = h.tokens.last().copied().unwrap_or(BOS);
                let (lp, next, _) = dec.step(&h.state, prev)?;
                let mut ranked: Vec<usize> = (0..lp.len()).filter(|&t| allowed(t, step)).collect();
                ranked.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                for &t in ranked.iter().take(width) {
                    let tok = t as TokenId;
                    let mut tokens = h.tokens.clone();
                    let done = tok == EOS;
                    if !done {
                        tokens.push(tok);
                    }
                    pool.push(Hyp {
                        tokens,
                        logp: h.logp + lp[t],
                        state: next.clone(),
                        done,
                    });
                }
            }
            let p = cfg.length_penalty;
            pool.sort_by(|a, b| {
                b.score(p)
                    .total_cmp(&a.score(p))
                    .then_with(|| a.tokens.cmp(&b.tokens))
            });
            pool.truncate(width);
            beam = pool;
        }
        let p = cfg.length_penalty;
        let pick = |only_done: bool| {
            beam.iter()
                .filter(|h| !only_done || h.done)
                .max_by(|a, b| a.score(p).total_cmp(&b.score(p)).then_with(|| b.tokens.cmp(&a.tokens)))
                .map(|h| h.tokens.clone())
        };
        Ok(pick(true).or_else(|| pick(false)).unwrap_or_default())
    }
}

pub fn decoder_registry() -> Registry<dyn Decoder> {
    let mut r: Registry<dyn Decoder> = Registry::new("decoder");
    r.register("greedy", Arc::new(Greedy));
    r.register("beam", Arc::new(Beam));
    r
}

/// Decodes with the strategy named by `cfg.mode`.
pub fn generate(model: &GeneratorModel, context: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>> {
    decoder_registry().get(&cfg.mode)?.decode(model, context, cfg)
}
