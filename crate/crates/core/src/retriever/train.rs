use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::RetrieverModel;
use crate::corpus::{Example, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Axis, Scalar, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub dim: usize,
    pub epochs: usize,
    /// In-batch negatives per example are `batch_size - 1`.
    pub batch_size: usize,
    pub temperature: f64,
    /// History turns used as memory slots; `None` keeps the whole history.
    pub history_turns: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            dim: 64,
            epochs: 20,
            batch_size: 32,
            temperature: 0.1,
            history_turns: None,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Softmax cross entropy of each context against its own response, with the
/// other responses of the batch as negatives.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &[Var],
    batch: &[&Example],
    history_turns: Option<usize>,
    temperature: f64,
) -> Result<Var> {
    if batch.len() < 2 {
        return Err(Error::Degenerate("loss"));
    }
    let mut ctx = Vec::with_capacity(batch.len());
    let mut cand = Vec::with_capacity(batch.len());
    for ex in batch {
        ctx.push(RetrieverModel::context_var(tape, vars, &ex.slots(history_turns))?);
        cand.push(RetrieverModel::candidate_var(tape, vars, &ex.response)?);
    }
    let c = tape.concat(&ctx, Axis::Rows)?;
    let k = tape.concat(&cand, Axis::Rows)?;
    let kt = tape.transpose(k)?;
    let sims = tape.matmul(c, kt)?;
    let logits = tape.scale(sims, T::from_f64(1.0 / temperature));
    let targets: Vec<usize> = (0..batch.len()).collect();
    tape.cross_entropy(logits, &targets, None)
}

/// Trains the retriever with in-batch negative sampling. Returns the model
/// and the mean batch loss of each epoch.
pub fn train_retriever(
    examples: &[Example],
    vocab: &Vocab,
    cfg: &RetrieverConfig,
) -> Result<(RetrieverModel, Vec<f64>)> {
    if cfg.batch_size < 2 {
        return Err(Error::Degenerate("loss"));
    }
    if examples.is_empty() {
        return Err(Error::Empty("retriever training examples"));
    }
    let mut model = RetrieverModel::new(vocab.len(), cfg.dim, &vocab.hash(), cfg.seed);
    let mut opt = Adam::new(cfg.adam, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<&Example> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let ex = &examples[i];
                if !batch.iter().any(|b| b.response == ex.response) {
                    batch.push(ex);
                }
            }
            if batch.len() < 2 {
                continue;
            }
            let mut tape = Tape::<f32>::new();
            let vars = model.params.bind(&mut tape);
            let loss = batch_loss(&mut tape, &vars, &batch, cfg.history_turns, cfg.temperature)?;
            let lv = tape.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("retriever loss {lv} at epoch {epoch}")));
            }
            let grads = tape.backward(loss)?;
            let mut dense = grads.into_dense(&model.params.shapes());
            opt.step(model.params.tensors_mut(), &mut dense)?;
            total += lv;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Degenerate("loss"));
        }
        let mean = total / batches as f64;
        log::debug!("retriever epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok((model, curve))
}
