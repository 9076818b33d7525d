use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Split, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::retriever::{rerank_by_label, score, CandidateIndex, Hit, RetrieverModel};

/// Whether label-dependent sources may run on held-out splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Held-out splits only see what a deployed system could see.
    Deployment,
    /// Sanity-check runs that may peek at held-out labels.
    Ablation,
}

/// What a retrieval source may consult.
#[derive(Clone, Copy)]
pub struct RetrievalEnv<'a> {
    pub retriever: Option<&'a RetrieverModel>,
    pub index: Option<&'a CandidateIndex>,
    pub split: Split,
    pub mode: Mode,
    /// Candidates scored against the label during training-split rerank.
    pub rerank_pool: usize,
    /// History turns the retriever encodes; `None` means all.
    pub history_turns: Option<usize>,
    pub seed: u64,
}

impl<'a> RetrievalEnv<'a> {
    fn retriever(&self) -> Result<&'a RetrieverModel> {
        self.retriever.ok_or_else(|| Error::invalid("this retrieval source needs a trained retriever"))
    }

    fn index(&self) -> Result<&'a CandidateIndex> {
        self.index.ok_or_else(|| Error::invalid("this retrieval source needs a candidate index"))
    }

    /// Per-example generator, independent of processing order.
    fn rng_for(&self, ex: &Example) -> ChaCha8Rng {
        let key = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((ex.dialogue_id as u64) << 20)
            .wrapping_add(ex.turn_index as u64);
        ChaCha8Rng::seed_from_u64(key)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub score: f32,
}

impl Retrieval {
    pub fn empty() -> Self {
        Retrieval {
            tokens: Vec::new(),
            text: String::new(),
            score: 0.0,
        }
    }

    fn from_hit(index: &CandidateIndex, hit: Hit) -> Self {
        let c = &index.candidates[hit.id];
        Retrieval {
            tokens: c.tokens.clone(),
            text: c.text.clone(),
            score: hit.score,
        }
    }
}

pub trait RetrievalSource: Send + Sync {
    /// Sources that read the gold response.
    fn uses_label(&self) -> bool;
    fn retrieve(&self, env: &RetrievalEnv, ex: &Example) -> Result<Retrieval>;
}

pub struct NoRetrieval;

impl RetrievalSource for NoRetrieval {
    fn uses_label(&self) -> bool {
        false
    }
    fn retrieve(&self, _: &RetrievalEnv, _: &Example) -> Result<Retrieval> {
        Ok(Retrieval::empty())
    }
}

/// A uniformly drawn index candidate.
pub struct RandomCandidate;

impl RetrievalSource for RandomCandidate {
    fn uses_label(&self) -> bool {
        false
    }
    fn retrieve(&self, env: &RetrievalEnv, ex: &Example) -> Result<Retrieval> {
        let index = env.index()?;
        if index.is_empty() {
            return Err(Error::Empty("candidate index"));
        }
        let id = env.rng_for(ex).gen_range(0..index.len());
        Ok(Retrieval::from_hit(index, Hit { id, score: 0.0 }))
    }
}

/// The trained retriever. On the training split the top `rerank_pool`
/// candidates are reranked against the label, skipping the label's own text;
/// elsewhere the top-scoring candidate is used.
pub struct MemNet;

impl RetrievalSource for MemNet {
    fn uses_label(&self) -> bool {
        false
    }
    fn retrieve(&self, env: &RetrievalEnv, ex: &Example) -> Result<Retrieval> {
        let model = env.retriever()?;
        let index = env.index()?;
        let query = model.embed_context(&ex.slots(env.history_turns))?;
        if env.split != Split::Train {
            let top = index.retrieve_topk(&query, 1)?[0];
            return Ok(Retrieval::from_hit(index, top));
        }
        let pool: Vec<Hit> = index
            .retrieve_topk(&query, env.rerank_pool.max(1) + 1)?
            .into_iter()
            .filter(|h| index.candidates[h.id].text != ex.response_text)
            .take(env.rerank_pool.max(1))
            .collect();
        if pool.is_empty() {
            return Err(Error::Empty("rerank pool"));
        }
        let chosen = rerank_by_label(model, index, &pool, &ex.response)?;
        let context_score = pool.iter().find(|h| h.id == chosen.id).map_or(0.0, |h| h.score);
        Ok(Retrieval::from_hit(
            index,
            Hit {
                id: chosen.id,
                score: context_score,
            },
        ))
    }
}

/// The gold response itself.
pub struct TrueLabel;

impl RetrievalSource for TrueLabel {
    fn uses_label(&self) -> bool {
        true
    }
    fn retrieve(&self, _: &RetrievalEnv, ex: &Example) -> Result<Retrieval> {
        Ok(Retrieval {
            tokens: ex.response.clone(),
            text: ex.response_text.clone(),
            score: 1.0,
        })
    }
}

/// The index candidate closest to the label, other than the label's text.
pub struct LabelNeighbor;

impl RetrievalSource for LabelNeighbor {
    fn uses_label(&self) -> bool {
        true
    }
    fn retrieve(&self, env: &RetrievalEnv, ex: &Example) -> Result<Retrieval> {
        let model = env.retriever()?;
        let index = env.index()?;
        let target = model.embed_candidate(&ex.response)?;
        let mut best: Option<Hit> = None;
        for (id, c) in index.candidates.iter().enumerate() {
            if c.text == ex.response_text {
                continue;
            }
            let s = score(&target, index.embedding(id));
            if best.map_or(true, |b| s > b.score) {
                best = Some(Hit { id, score: s });
            }
        }
        let hit = best.ok_or(Error::Empty("candidate index without the label"))?;
        Ok(Retrieval::from_hit(index, hit))
    }
}

pub fn source_registry() -> Registry<dyn RetrievalSource> {
    let mut r: Registry<dyn RetrievalSource> = Registry::new("retrieval source");
    r.register("none", Arc::new(NoRetrieval));
    r.register("random", Arc::new(RandomCandidate));
    r.register("memnet", Arc::new(MemNet));
    r.register("true_label", Arc::new(TrueLabel));
    r.register("label_neighbor", Arc::new(LabelNeighbor));
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedExample {
    pub example: Example,
    pub retrieved: Retrieval,
    pub source: String,
}

/// Persisted form: one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub dialogue_id: usize,
    pub turn_index: usize,
    pub retrieved_text: String,
    pub source: String,
    pub score: f32,
}

/// Retrieval for every example with the named source.
pub fn precompute_retrievals(env: &RetrievalEnv, examples: &[Example], source: &str) -> Result<Vec<AugmentedExample>> {
    let src = source_registry().get(source)?;
    if src.uses_label() && env.split != Split::Train && env.mode == Mode::Deployment {
        return Err(Error::invalid(format!(
            "source {source} reads labels; on the {} split it is only allowed in ablation mode",
            env.split
        )));
    }
    examples
        .par_iter()
        .map(|ex| {
            Ok(AugmentedExample {
                example: ex.clone(),
                retrieved: src.retrieve(env, ex)?,
                source: source.to_string(),
            })
        })
        .collect()
}

pub fn to_records(augmented: &[AugmentedExample]) -> Vec<AugmentedRecord> {
    augmented
        .iter()
        .map(|a| AugmentedRecord {
            dialogue_id: a.example.dialogue_id,
            turn_index: a.example.turn_index,
            retrieved_text: a.retrieved.text.clone(),
            source: a.source.clone(),
            score: a.retrieved.score,
        })
        .collect()
}

pub fn save_augmented(path: &Path, augmented: &[AugmentedExample]) -> Result<()> {
    let mut out = String::new();
    for r in to_records(augmented) {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn load_augmented(path: &Path) -> Result<Vec<AugmentedRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Joins stored retrievals back onto their examples, re-encoding the text.
pub fn attach(records: &[AugmentedRecord], examples: &[Example], vocab: &Vocab) -> Result<Vec<AugmentedExample>> {
    let by_key: HashMap<(usize, usize), &AugmentedRecord> =
        records.iter().map(|r| ((r.dialogue_id, r.turn_index), r)).collect();
    examples
        .iter()
        .map(|ex| {
            let r = by_key.get(&(ex.dialogue_id, ex.turn_index)).ok_or_else(|| {
                Error::invalid(format!(
                    "no stored retrieval for dialogue {} turn {}",
                    ex.dialogue_id, ex.turn_index
                ))
            })?;
            Ok(AugmentedExample {
                example: ex.clone(),
                retrieved: Retrieval {
                    tokens: vocab.encode_text(&r.retrieved_text),
                    text: r.retrieved_text.clone(),
                    score: r.score,
                },
                source: r.source.clone(),
            })
        })
        .collect()
}
