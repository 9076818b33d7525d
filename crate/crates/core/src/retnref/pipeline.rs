use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::overlap::{copy_fix, word_overlap, Flag};
use super::source::Retrieval;
use super::variant::{augment_input, Variant, VariantConfig};
use crate::corpus::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::generator::{generate, DecodeConfig, GeneratorModel};
use crate::registry::Registry;
use crate::retriever::{CandidateIndex, RetrieverModel};

/// The dialogue so far, from the responding side's point of view.
#[derive(Clone, Copy, Debug)]
pub struct Turns<'a> {
    pub persona: &'a [Vec<TokenId>],
    pub history: &'a [Vec<TokenId>],
    /// The recorded next utterance, when replaying a corpus dialogue.
    pub gold: Option<&'a str>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub retrieved: Vec<TokenId>,
    pub retrieved_text: Option<String>,
    pub retrieval_score: Option<f32>,
    /// Decoder output before any copy fix.
    pub generated: Vec<TokenId>,
    pub overlap: Option<f64>,
    pub flag: Flag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub trace: Trace,
}

/// Anything that can take a turn in a dialogue.
pub trait Responder: Send + Sync {
    fn respond(&self, turns: &Turns) -> Result<Reply>;
}

/// Top-1 retrieval for the current dialogue state.
pub fn retrieve_top1(
    retriever: &RetrieverModel,
    index: &CandidateIndex,
    turns: &Turns,
    history_turns: Option<usize>,
) -> Result<Retrieval> {
    let hist = match history_turns {
        Some(n) => &turns.history[turns.history.len().saturating_sub(n)..],
        None => turns.history,
    };
    let slots: Vec<&[TokenId]> = turns
        .persona
        .iter()
        .chain(hist)
        .map(Vec::as_slice)
        .filter(|s| !s.is_empty())
        .collect();
    let query = retriever.embed_context(&slots)?;
    let hit = index.retrieve_topk(&query, 1)?[0];
    let c = &index.candidates[hit.id];
    Ok(Retrieval {
        tokens: c.tokens.clone(),
        text: c.text.clone(),
        score: hit.score,
    })
}

/// Retrieve, augment, generate and (for `++`) copy-fix.
#[derive(Clone)]
pub struct Pipeline {
    pub variant: Variant,
    pub generator: Arc<GeneratorModel>,
    pub retriever: Option<Arc<RetrieverModel>>,
    pub index: Option<Arc<CandidateIndex>>,
    pub vocab: Arc<Vocab>,
    pub config: VariantConfig,
    pub decode: DecodeConfig,
    /// History turns the retriever encodes; `None` means all.
    pub retriever_history: Option<usize>,
}

impl Pipeline {
    pub fn retrieve(&self, turns: &Turns) -> Result<Retrieval> {
        if !self.variant.uses_retrieval() {
            return Ok(Retrieval::empty());
        }
        let (Some(r), Some(i)) = (&self.retriever, &self.index) else {
            return Err(Error::invalid(format!("variant {} needs a retriever and index", self.variant)));
        };
        retrieve_top1(r, i, turns, self.retriever_history)
    }

    /// Generation given an already chosen retrieval.
    pub fn respond_with(&self, turns: &Turns, retrieval: &Retrieval) -> Result<Reply> {
        let input = augment_input(turns.persona, turns.history, &retrieval.tokens, self.variant, &self.config);
        if input.is_empty() {
            return Err(Error::Empty("dialogue context"));
        }
        let generated = generate(&self.generator, &input, &self.decode)?;
        let has_retrieval = self.variant.uses_retrieval();
        let overlap = if has_retrieval && !generated.is_empty() {
            Some(word_overlap(&generated, &retrieval.tokens)?)
        } else {
            None
        };
        let (tokens, flag) = if self.variant.copy_fix() {
            copy_fix(&generated, &retrieval.tokens, self.config.overlap_threshold)?
        } else {
            (generated.clone(), Flag::Generated)
        };
        Ok(Reply {
            text: self.vocab.decode_text(&tokens),
            tokens,
            trace: Trace {
                retrieved: retrieval.tokens.clone(),
                retrieved_text: has_retrieval.then(|| retrieval.text.clone()),
                retrieval_score: has_retrieval.then_some(retrieval.score),
                generated,
                overlap,
                flag,
            },
        })
    }
}

impl Responder for Pipeline {
    fn respond(&self, turns: &Turns) -> Result<Reply> {
        let r = self.retrieve(turns)?;
        self.respond_with(turns, &r)
    }
}

/// The retriever alone: replies with its top candidate.
pub struct RetrieverResponder {
    pub retriever: Arc<RetrieverModel>,
    pub index: Arc<CandidateIndex>,
    pub vocab: Arc<Vocab>,
    pub history_turns: Option<usize>,
}

impl Responder for RetrieverResponder {
    fn respond(&self, turns: &Turns) -> Result<Reply> {
        let r = retrieve_top1(&self.retriever, &self.index, turns, self.history_turns)?;
        Ok(Reply {
            text: self.vocab.decode_text(&r.tokens),
            tokens: r.tokens.clone(),
            trace: Trace {
                retrieved: r.tokens.clone(),
                retrieved_text: Some(r.text.clone()),
                retrieval_score: Some(r.score),
                generated: Vec::new(),
                overlap: Some(1.0),
                flag: Flag::Copied,
            },
        })
    }
}

/// Replays the recorded next utterance; used to compare models with people.
pub struct GoldResponder {
    pub vocab: Arc<Vocab>,
}

impl Responder for GoldResponder {
    fn respond(&self, turns: &Turns) -> Result<Reply> {
        let text = turns.gold.ok_or_else(|| Error::invalid("no recorded reply for this turn"))?;
        let tokens = self.vocab.encode_text(text);
        Ok(Reply {
            text: text.to_string(),
            tokens,
            trace: Trace {
                retrieved: Vec::new(),
                retrieved_text: None,
                retrieval_score: None,
                generated: Vec::new(),
                overlap: None,
                flag: Flag::Generated,
            },
        })
    }
}

pub type ResponderRegistry = Registry<dyn Responder>;

pub fn responder_registry() -> ResponderRegistry {
    Registry::new("model")
}
