use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numerics::{Axis, Init, ParamStore, Scalar, Tape, Tensor, Var};

pub(crate) const CONTEXT_EMB: usize = 0;
pub(crate) const CANDIDATE_EMB: usize = 1;
pub(crate) const QUERY: usize = 2;

/// Context and candidate encoders sharing one `dim`-dimensional space.
///
/// A memory slot (persona sentence or history turn) is the mean of its
/// context-table embeddings. The last slot, projected through the query
/// matrix, attends over all slots; the attention-weighted sum is
/// L2-normalized. Candidates are the normalized mean of their
/// candidate-table embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverModel {
    pub dim: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub params: ParamStore,
}

impl RetrieverModel {
    pub fn new(vocab_size: usize, dim: usize, vocab_hash: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.add("context_embedding", &[vocab_size, dim], Init::Uniform, &mut rng);
        params.add("candidate_embedding", &[vocab_size, dim], Init::Uniform, &mut rng);
        params.add("query", &[dim, dim], Init::Uniform, &mut rng);
        RetrieverModel {
            dim,
            vocab_size,
            vocab_hash: vocab_hash.to_string(),
            params,
        }
    }

    /// `[n_slots, dim]` slot encodings.
    pub(crate) fn slot_matrix<T: Scalar>(
        tape: &mut Tape<T>,
        vars: &[Var],
        slots: &[&[TokenId]],
    ) -> Result<Var> {
        if slots.is_empty() {
            return Err(Error::Empty("context memory"));
        }
        let mut rows = Vec::with_capacity(slots.len());
        for s in slots {
            if s.is_empty() {
                return Err(Error::Empty("memory slot"));
            }
            let ids: Vec<usize> = s.iter().map(|&t| t as usize).collect();
            let e = tape.embedding(vars[CONTEXT_EMB], &ids)?;
            rows.push(tape.mean_rows(e)?);
        }
        tape.concat(&rows, Axis::Rows)
    }

    /// Attention logits of every slot against the query built from the last slot.
    pub(crate) fn attention_logits<T: Scalar>(
        tape: &mut Tape<T>,
        vars: &[Var],
        slots: Var,
    ) -> Result<Var> {
        let n = tape.value(slots).rows();
        let last = tape.slice(slots, Axis::Rows, n - 1, 1)?;
        let q = tape.matmul(last, vars[QUERY])?;
        let st = tape.transpose(slots)?;
        tape.matmul(q, st)
    }

    /// Unit context vector `[1, dim]`.
    pub fn context_var<T: Scalar>(
        tape: &mut Tape<T>,
        vars: &[Var],
        slots: &[&[TokenId]],
    ) -> Result<Var> {
        let s = Self::slot_matrix(tape, vars, slots)?;
        let logits = Self::attention_logits(tape, vars, s)?;
        let w = tape.softmax(logits, Axis::Rows)?;
        let mixed = tape.matmul(w, s)?;
        tape.normalize_rows(mixed)
    }

    /// Unit candidate vector `[1, dim]`.
    pub fn candidate_var<T: Scalar>(
        tape: &mut Tape<T>,
        vars: &[Var],
        tokens: &[TokenId],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Empty("candidate utterance"));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let e = tape.embedding(vars[CANDIDATE_EMB], &ids)?;
        let m = tape.mean_rows(e)?;
        tape.normalize_rows(m)
    }

    pub fn embed_context(&self, slots: &[&[TokenId]]) -> Result<Vec<f32>> {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape);
        let v = Self::context_var(&mut tape, &vars, slots)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Attention weights the context encoder assigns to each slot.
    pub fn context_attention(&self, slots: &[&[TokenId]]) -> Result<Vec<f32>> {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape);
        let s = Self::slot_matrix(&mut tape, &vars, slots)?;
        let logits = Self::attention_logits(&mut tape, &vars, s)?;
        let w = tape.softmax(logits, Axis::Rows)?;
        Ok(tape.value(w).data().to_vec())
    }

    pub fn embed_candidate(&self, tokens: &[TokenId]) -> Result<Vec<f32>> {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape);
        let v = Self::candidate_var(&mut tape, &vars, tokens)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn to_checkpoint(&self) -> crate::checkpoint::Checkpoint {
        let named = self
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.params.tensors().iter().cloned())
            .collect();
        crate::checkpoint::Checkpoint::new(
            "retriever",
            &self.vocab_hash,
            serde_json::json!({ "dim": self.dim, "vocab_size": self.vocab_size }),
            named,
        )
    }

    pub fn from_checkpoint(ck: &crate::checkpoint::Checkpoint) -> Result<Self> {
        #[derive(Deserialize, Serialize)]
        struct Meta {
            dim: usize,
            vocab_size: usize,
        }
        let meta: Meta = serde_json::from_value(ck.metadata.meta.clone())?;
        let params = ParamStore::from_parts(ck.names(), ck.tensors.clone())?;
        if params.len() != 3 || params.get(CONTEXT_EMB).shape() != [meta.vocab_size, meta.dim] {
            return Err(Error::invalid("retriever checkpoint has unexpected tensors"));
        }
        Ok(RetrieverModel {
            dim: meta.dim,
            vocab_size: meta.vocab_size,
            vocab_hash: ck.metadata.vocab_hash.clone(),
            params,
        })
    }
}

/// Cosine similarity of two unit vectors.
pub fn score(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of raw attention logits, as applied over memory slots.
pub fn attention_weights(logits: &[f64]) -> Vec<f64> {
    let t = Tensor::row(logits.to_vec());
    crate::numerics::softmax(&t, Axis::Rows).into_data()
}
