use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{TokenId, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_at, Axis, Init, ParamStore, Scalar, Tape, Tensor, Var};

/// Architecture hyperparameters fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorDims {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub max_context_tokens: usize,
    pub max_response_tokens: usize,
}

/// Parameter slot layout.
#[derive(Clone, Copy, Debug)]
struct Layout {
    layers: usize,
}

impl Layout {
    const EMB: usize = 0;
    fn enc_w(self, l: usize) -> usize {
        1 + 2 * l
    }
    fn enc_b(self, l: usize) -> usize {
        2 + 2 * l
    }
    fn dec_w(self, l: usize) -> usize {
        1 + 2 * self.layers + 2 * l
    }
    fn dec_b(self, l: usize) -> usize {
        2 + 2 * self.layers + 2 * l
    }
    fn attn(self) -> usize {
        1 + 4 * self.layers
    }
    fn comb_w(self) -> usize {
        2 + 4 * self.layers
    }
    fn comb_b(self) -> usize {
        3 + 4 * self.layers
    }
    fn out_w(self) -> usize {
        4 + 4 * self.layers
    }
    fn out_b(self) -> usize {
        5 + 4 * self.layers
    }
}

pub type LstmState = Vec<(Var, Var)>;

/// Decoder recurrent state: per-layer `(h, c)` plus the previous
/// attentional output fed into the next step.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub layers: LstmState,
    pub feed: Var,
}

/// Encoder output on a tape.
pub struct Encoded {
    /// `[S, H]` top-layer states.
    pub states: Var,
    states_t: Var,
    pub final_state: LstmState,
}

pub(crate) struct TeacherForced {
    pub loss: Var,
    pub attention: Vec<Var>,
    pub tokens: usize,
}

/// Shared token embeddings, stacked LSTM encoder and decoder, bilinear
/// attention over top-layer encoder states, and a vocabulary projection.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub dims: GeneratorDims,
    pub vocab_hash: String,
    pub params: ParamStore,
}

impl GeneratorModel {
    pub fn new(dims: GeneratorDims, vocab_hash: &str, seed: u64) -> Self {
        assert!(dims.layers >= 1, "at least one LSTM layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (e, h, v) = (dims.emb_dim, dims.hidden, dims.vocab_size);
        p.add("embedding", &[v, e], Init::Uniform, &mut rng);
        for side in ["encoder", "decoder"] {
            for l in 0..dims.layers {
                let input = match (side, l) {
                    ("encoder", 0) => e,
                    // the decoder's first layer also reads the previous attentional state
                    (_, 0) => e + h,
                    _ => h,
                };
                p.add(&format!("{side}.{l}.weight"), &[input + h, 4 * h], Init::Uniform, &mut rng);
                p.add(&format!("{side}.{l}.bias"), &[1, 4 * h], Init::Zeros, &mut rng);
            }
        }
        p.add("attention", &[h, h], Init::Uniform, &mut rng);
        p.add("combine.weight", &[2 * h, h], Init::Uniform, &mut rng);
        p.add("combine.bias", &[1, h], Init::Zeros, &mut rng);
        p.add("output.weight", &[h, v], Init::Uniform, &mut rng);
        p.add("output.bias", &[1, v], Init::Zeros, &mut rng);
        GeneratorModel {
            dims,
            vocab_hash: vocab_hash.to_string(),
            params: p,
        }
    }

    fn layout(&self) -> Layout {
        Layout {
            layers: self.dims.layers,
        }
    }

    /// Keeps the most recent `max_context_tokens` of the context.
    pub fn clip_context<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        &context[context.len().saturating_sub(self.dims.max_context_tokens)..]
    }

    pub fn clip_response<'a>(&self, response: &'a [TokenId]) -> &'a [TokenId] {
        &response[..response.len().min(self.dims.max_response_tokens)]
    }

    fn lstm_cell<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        w: Var,
        b: Var,
        x: Var,
        (h, c): (Var, Var),
    ) -> Result<(Var, Var)> {
        let hd = self.dims.hidden;
        let xh = tape.concat(&[x, h], Axis::Cols)?;
        let pre = tape.matmul(xh, w)?;
        let gates = tape.add_row(pre, b)?;
        let i = tape.slice(gates, Axis::Cols, 0, hd)?;
        let f = tape.slice(gates, Axis::Cols, hd, hd)?;
        let g = tape.slice(gates, Axis::Cols, 2 * hd, hd)?;
        let o = tape.slice(gates, Axis::Cols, 3 * hd, hd)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c2 = tape.add(keep, write)?;
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        context: &[TokenId],
    ) -> Result<Encoded> {
        let context = self.clip_context(context);
        if context.is_empty() {
            return Err(Error::Empty("generator context"));
        }
        let lay = self.layout();
        let ids: Vec<usize> = context.iter().map(|&t| t as usize).collect();
        let emb = tape.embedding(vars[Layout::EMB], &ids)?;
        let mut state: LstmState = (0..self.dims.layers)
            .map(|_| {
                let z = Tensor::zeros(&[1, self.dims.hidden]);
                (tape.input(z.clone()), tape.input(z))
            })
            .collect();
        let mut tops = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let mut x = tape.slice(emb, Axis::Rows, t, 1)?;
            for (l, s) in state.iter_mut().enumerate() {
                *s = self.lstm_cell(tape, vars[lay.enc_w(l)], vars[lay.enc_b(l)], x, *s)?;
                x = s.0;
            }
            tops.push(x);
        }
        let states = tape.concat(&tops, Axis::Rows)?;
        let states_t = tape.transpose(states)?;
        Ok(Encoded {
            states,
            states_t,
            final_state: state,
        })
    }

    pub fn initial_state<T: Scalar>(&self, tape: &mut Tape<T>, enc: &Encoded) -> DecoderState {
        DecoderState {
            layers: enc.final_state.clone(),
            feed: tape.input(Tensor::zeros(&[1, self.dims.hidden])),
        }
    }

    /// One decoder step from input embedding `x`. Returns the attentional
    /// hidden state `[1, H]`, the new state and the attention row.
    pub fn decoder_cell<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        enc: &Encoded,
        state: &DecoderState,
        x: Var,
    ) -> Result<(Var, DecoderState, Var)> {
        let lay = self.layout();
        let mut next = Vec::with_capacity(state.layers.len());
        let mut x = tape.concat(&[x, state.feed], Axis::Cols)?;
        for (l, s) in state.layers.iter().enumerate() {
            let s2 = self.lstm_cell(tape, vars[lay.dec_w(l)], vars[lay.dec_b(l)], x, *s)?;
            x = s2.0;
            next.push(s2);
        }
        let keyed = tape.matmul(x, vars[lay.attn()])?;
        let scores = tape.matmul(keyed, enc.states_t)?;
        let attn = tape.softmax(scores, Axis::Rows)?;
        let ctx = tape.matmul(attn, enc.states)?;
        let both = tape.concat(&[x, ctx], Axis::Cols)?;
        let pre = tape.matmul(both, vars[lay.comb_w()])?;
        let pre = tape.add_row(pre, vars[lay.comb_b()])?;
        let out = tape.tanh(pre);
        let state = DecoderState {
            layers: next,
            feed: out,
        };
        Ok((out, state, attn))
    }

    /// Vocabulary logits `[n, V]` for `n` attentional states.
    pub fn project<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], hidden: Var) -> Result<Var> {
        let lay = self.layout();
        let l = tape.matmul(hidden, vars[lay.out_w()])?;
        tape.add_row(l, vars[lay.out_b()])
    }

    pub fn embed_token<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], token: TokenId) -> Result<Var> {
        tape.embedding(vars[Layout::EMB], &[token as usize])
    }

    /// Teacher-forced mean token NLL of `response ++ [EOS]` given `context`.
    pub(crate) fn teacher_forced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        context: &[TokenId],
        response: &[TokenId],
    ) -> Result<TeacherForced> {
        let response = self.clip_response(response);
        let enc = self.encode(tape, vars, context)?;
        let inputs: Vec<usize> = std::iter::once(BOS)
            .chain(response.iter().copied())
            .map(|t| t as usize)
            .collect();
        let targets: Vec<usize> = response
            .iter()
            .copied()
            .chain(std::iter::once(EOS))
            .map(|t| t as usize)
            .collect();
        let emb = tape.embedding(vars[Layout::EMB], &inputs)?;
        let mut state = self.initial_state(tape, &enc);
        let mut outs = Vec::with_capacity(inputs.len());
        let mut attention = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let x = tape.slice(emb, Axis::Rows, t, 1)?;
            let (o, s, a) = self.decoder_cell(tape, vars, &enc, &state, x)?;
            state = s;
            outs.push(o);
            attention.push(a);
        }
        let hidden = tape.concat(&outs, Axis::Rows)?;
        let logits = self.project(tape, vars, hidden)?;
        let loss = tape.cross_entropy(logits, &targets, Some(PAD as usize))?;
        let tokens = targets.iter().filter(|&&t| t != PAD as usize).count();
        Ok(TeacherForced {
            loss,
            attention,
            tokens,
        })
    }

    /// Summed NLL (nats) and token count for one pair, in f64.
    pub fn pair_nll(&self, context: &[TokenId], response: &[TokenId]) -> Result<(f64, usize)> {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape);
        let tf = self.teacher_forced(&mut tape, &vars, context, response)?;
        Ok((tape.value(tf.loss).item() as f64 * tf.tokens as f64, tf.tokens))
    }

    /// Attention weights `[decode steps, context positions]` of a
    /// teacher-forced pass.
    pub fn attention_map(&self, context: &[TokenId], response: &[TokenId]) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape);
        let tf = self.teacher_forced(&mut tape, &vars, context, response)?;
        let rows = tf.attention.len();
        let cols = tape.value(tf.attention[0]).cols();
        let data = tf
            .attention
            .iter()
            .flat_map(|&a| tape.value(a).data().to_vec())
            .collect();
        Tensor::new(vec![rows, cols], data)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let named = self
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.params.tensors().iter().cloned())
            .collect();
        Checkpoint::new(
            "generator",
            &self.vocab_hash,
            serde_json::to_value(self.dims).expect("serializable"),
            named,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let dims: GeneratorDims = serde_json::from_value(ck.metadata.meta.clone())?;
        let params = ParamStore::from_parts(ck.names(), ck.tensors.clone())?;
        let fresh = GeneratorModel::new(dims, &ck.metadata.vocab_hash, 0);
        if fresh.params.names() != params.names() || fresh.params.shapes() != params.shapes() {
            return Err(Error::invalid("generator checkpoint tensors do not match its dims"));
        }
        Ok(GeneratorModel {
            dims,
            vocab_hash: ck.metadata.vocab_hash.clone(),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Loads and checks the checkpoint against the expected vocabulary hash.
    pub fn load(path: &Path, vocab_hash: &str) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind("generator", path)?;
        ck.verify_vocab(vocab_hash)?;
        Self::from_checkpoint(&ck)
    }
}

/// Incremental decoding session: encoder run once, then one call per step.
pub struct StepDecoder<'m> {
    model: &'m GeneratorModel,
    tape: Tape<f32>,
    vars: Vec<Var>,
    enc: Encoded,
}

impl<'m> StepDecoder<'m> {
    pub fn new(model: &'m GeneratorModel, context: &[TokenId]) -> Result<Self> {
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let enc = model.encode(&mut tape, &vars, context)?;
        Ok(StepDecoder {
            model,
            tape,
            vars,
            enc,
        })
    }

    pub fn initial_state(&mut self) -> DecoderState {
        self.model.initial_state(&mut self.tape, &self.enc)
    }

    /// Feeds `token`; returns log-probabilities over the vocabulary, the new
    /// state and the attention row.
    pub fn step(&mut self, state: &DecoderState, token: TokenId) -> Result<(Vec<f64>, DecoderState, Vec<f32>)> {
        let x = self.model.embed_token(&mut self.tape, &self.vars, token)?;
        let (out, next, attn) = self
            .model
            .decoder_cell(&mut self.tape, &self.vars, &self.enc, state, x)?;
        let logits = self.model.project(&mut self.tape, &self.vars, out)?;
        let row = self.tape.value(logits).data();
        let lp = (0..row.len()).map(|i| log_softmax_at(row, i)).collect();
        Ok((lp, next, self.tape.value(attn).data().to_vec()))
    }
}
