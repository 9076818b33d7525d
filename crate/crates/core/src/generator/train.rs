use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{GeneratorDims, GeneratorModel};
use crate::corpus::{Example, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Scalar, Tape, Tensor};

/// One input/target pair for the encoder/decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqPair {
    pub input: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl From<&Example> for Seq2SeqPair {
    fn from(ex: &Example) -> Self {
        Seq2SeqPair {
            input: ex.context.clone(),
            target: ex.response.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub max_context_tokens: usize,
    pub max_response_tokens: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `None` trains
    /// for the full budget.
    pub patience: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            emb_dim: 64,
            hidden: 128,
            layers: 2,
            max_context_tokens: 128,
            max_response_tokens: 24,
            epochs: 20,
            batch_size: 16,
            patience: Some(3),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// The long-training comparison: 100 epochs, no early stopping.
    pub fn overtrained() -> Self {
        GeneratorConfig {
            epochs: 100,
            patience: None,
            ..Self::default()
        }
    }

    pub fn dims(&self, vocab_size: usize) -> GeneratorDims {
        GeneratorDims {
            vocab_size,
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            layers: self.layers,
            max_context_tokens: self.max_context_tokens,
            max_response_tokens: self.max_response_tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Token-weighted training NLL per epoch.
    pub train_loss: Vec<f64>,
    /// Validation perplexity per epoch (empty without validation data).
    pub valid_ppl: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Summed NLL and token count over `pairs`.
pub fn total_nll(model: &GeneratorModel, pairs: &[Seq2SeqPair]) -> Result<(f64, usize)> {
    let parts: Vec<Result<(f64, usize)>> = pairs
        .par_iter()
        .map(|p| model.pair_nll(&p.input, &p.target))
        .collect();
    let mut nll = 0.0;
    let mut tokens = 0;
    for r in parts {
        let (n, t) = r?;
        nll += n;
        tokens += t;
    }
    Ok((nll, tokens))
}

/// Corpus-level perplexity: `exp(total NLL / total target tokens)`, EOS
/// included.
pub fn perplexity(model: &GeneratorModel, pairs: &[Seq2SeqPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("perplexity examples"));
    }
    let (nll, tokens) = total_nll(model, pairs)?;
    Ok((nll / tokens as f64).exp())
}

/// Gradient of `weight · mean NLL` for one pair, plus its summed NLL and
/// token count.
fn pair_grads<T: Scalar>(
    model: &GeneratorModel,
    params: &[Tensor<T>],
    pair: &Seq2SeqPair,
    weight: f64,
) -> Result<(f64, usize, Vec<Tensor<T>>)> {
    let mut tape = Tape::<T>::new();
    let vars = crate::numerics::bind_all(&mut tape, params);
    let tf = model.teacher_forced(&mut tape, &vars, &pair.input, &pair.target)?;
    let mean = tape.value(tf.loss).item().as_f64();
    let scaled = tape.scale(tf.loss, T::from_f64(weight * tf.tokens as f64));
    let shapes: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
    let grads = tape.backward(scaled)?.into_dense(&shapes);
    Ok((mean * tf.tokens as f64, tf.tokens, grads))
}

/// Token-weighted mean NLL over `pairs` and its gradient. Used by training
/// (f32) and by gradient checks (f64).
pub fn batch_loss_and_grads<T: Scalar>(
    model: &GeneratorModel,
    params: &[Tensor<T>],
    pairs: &[Seq2SeqPair],
) -> Result<(f64, Vec<Tensor<T>>)> {
    let counts: usize = pairs
        .iter()
        .map(|p| model.clip_response(&p.target).len() + 1)
        .sum();
    let weight = 1.0 / counts as f64;
    let parts: Vec<Result<(f64, usize, Vec<Tensor<T>>)>> = pairs
        .par_iter()
        .map(|p| pair_grads(model, params, p, weight))
        .collect();
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor<T>>> = None;
    for r in parts {
        let (nll, _, g) = r?;
        total += nll;
        match acc.as_mut() {
            None => acc = Some(g),
            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| x.add_assign(y)),
        }
    }
    let grads = acc.ok_or(Error::Empty("generator batch"))?;
    Ok((total * weight, grads))
}

/// Trains by teacher forcing with early stopping on validation perplexity.
/// The parameters of the best validation epoch are returned.
pub fn train_generator(
    train: &[Seq2SeqPair],
    valid: &[Seq2SeqPair],
    vocab: &Vocab,
    cfg: &GeneratorConfig,
) -> Result<(GeneratorModel, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("generator training examples"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("batch_size and epochs must be positive"));
    }
    let mut model = GeneratorModel::new(cfg.dims(vocab.len()), &vocab.hash(), cfg.seed);
    let mut opt = Adam::new(cfg.adam, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        valid_ppl: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, Vec<Tensor<f32>>)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Seq2SeqPair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut grads) = batch_loss_and_grads(&model, model.params.tensors(), &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("generator loss {loss} at epoch {epoch}")));
            }
            let n: usize = batch
                .iter()
                .map(|p| model.clip_response(&p.target).len() + 1)
                .sum();
            nll += loss * n as f64;
            tokens += n;
            opt.step(model.params.tensors_mut(), &mut grads)?;
        }
        let epoch_loss = nll / tokens as f64;
        report.train_loss.push(epoch_loss);
        if valid.is_empty() {
            log::debug!("generator epoch {epoch}: loss {epoch_loss:.4}");
            report.best_epoch = epoch;
            continue;
        }
        let ppl = perplexity(&model, valid)?;
        log::debug!("generator epoch {epoch}: loss {epoch_loss:.4} valid ppl {ppl:.3}");
        report.valid_ppl.push(ppl);
        if best.as_ref().map_or(true, |(b, _)| ppl < *b) {
            best = Some((ppl, model.params.tensors().to_vec()));
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, tensors)) = best {
        model.params.tensors_mut().clone_from_slice(&tensors);
    }
    Ok((model, report))
}
