use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{score, RetrieverModel};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub dialogue_id: usize,
    pub turn_index: usize,
}

/// A ranked retrieval result: candidate row and its cosine score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub id: usize,
    pub score: f32,
}

/// Exact-search bank of training utterances with unit-norm embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateIndex {
    pub candidates: Vec<Candidate>,
    /// `[n, dim]`, row `i` encodes candidate `i`.
    pub embeddings: Tensor<f32>,
    pub vocab_hash: String,
}

impl CandidateIndex {
    /// Indexes every distinct utterance of `corpus`; the first occurrence
    /// of a repeated text keeps its provenance.
    pub fn build(model: &RetrieverModel, corpus: &Corpus, vocab: &Vocab) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut candidates = Vec::new();
        for (di, d) in corpus.dialogues.iter().enumerate() {
            for (ti, t) in d.turns.iter().enumerate() {
                if !seen.insert(t.text.clone()) {
                    continue;
                }
                let tokens = vocab.encode_text(&t.text);
                if tokens.is_empty() {
                    continue;
                }
                candidates.push(Candidate {
                    text: t.text.clone(),
                    tokens,
                    dialogue_id: di,
                    turn_index: ti,
                });
            }
        }
        Self::from_candidates(model, candidates)
    }

    pub fn from_candidates(model: &RetrieverModel, candidates: Vec<Candidate>) -> Result<Self> {
        let mut data = Vec::with_capacity(candidates.len() * model.dim);
        for c in &candidates {
            data.extend(model.embed_candidate(&c.tokens)?);
        }
        Ok(CandidateIndex {
            embeddings: Tensor::new(vec![candidates.len(), model.dim], data)?,
            candidates,
            vocab_hash: model.vocab_hash.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn embedding(&self, id: usize) -> &[f32] {
        self.embeddings.row_slice(id)
    }

    /// Exact top-`k` by score, descending; ties go to the lower row id.
    pub fn retrieve_topk(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.is_empty() {
            return Err(Error::Empty("candidate index"));
        }
        let mut hits: Vec<Hit> = (0..self.len())
            .map(|id| Hit {
                id,
                score: score(query, self.embedding(id)),
            })
            .collect();
        let k = k.min(hits.len());
        let cmp = |a: &Hit, b: &Hit| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id));
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_by(cmp);
        Ok(hits)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "index",
            &self.vocab_hash,
            serde_json::json!({ "candidates": self.candidates }),
            vec![("embeddings".into(), self.embeddings.clone())],
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            candidates: Vec<Candidate>,
        }
        let meta: Meta = serde_json::from_value(ck.metadata.meta.clone())?;
        let embeddings = ck
            .tensors
            .first()
            .cloned()
            .ok_or_else(|| Error::invalid("index checkpoint without embeddings"))?;
        if embeddings.rows() != meta.candidates.len() {
            return Err(Error::invalid("index rows do not match candidate count"));
        }
        Ok(CandidateIndex {
            candidates: meta.candidates,
            embeddings,
            vocab_hash: ck.metadata.vocab_hash.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind("index", path)?;
        Self::from_checkpoint(&ck)
    }
}

/// Picks the candidate whose embedding is closest to the label's; ties go to
/// the earliest rank.
pub fn rerank_by_label(
    model: &RetrieverModel,
    index: &CandidateIndex,
    candidates: &[Hit],
    label: &[TokenId],
) -> Result<Hit> {
    if candidates.is_empty() {
        return Err(Error::Empty("rerank candidates"));
    }
    let target = model.embed_candidate(label)?;
    let mut best: Option<Hit> = None;
    for h in candidates {
        let s = score(&target, index.embedding(h.id));
        if best.map_or(true, |b| s > b.score) {
            best = Some(Hit { id: h.id, score: s });
        }
    }
    Ok(best.expect("non-empty"))
}
