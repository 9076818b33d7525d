use serde::{Deserialize, Serialize};

use super::{Corpus, Speaker, TokenId, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sides {
    /// Only replies of the persona-holding side (`P2`).
    ModelSide,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub history_turns: usize,
    pub max_context_tokens: usize,
    pub sides: Sides,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        ExampleConfig {
            history_turns: 2,
            max_context_tokens: 128,
            sides: Sides::Both,
        }
    }
}

/// One (context, response) training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub dialogue_id: usize,
    pub turn_index: usize,
    pub speaker: Speaker,
    /// Encoded persona sentences of the responding speaker.
    pub persona: Vec<Vec<TokenId>>,
    /// Every earlier turn, oldest first.
    pub history: Vec<Vec<TokenId>>,
    /// Persona plus the last `history_turns` turns, left-truncated.
    pub context: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub response_text: String,
}

impl Example {
    /// Persona and history as separate memory slots.
    pub fn slots(&self, history_turns: Option<usize>) -> Vec<&[TokenId]> {
        let hist = match history_turns {
            Some(n) => &self.history[self.history.len().saturating_sub(n)..],
            None => &self.history[..],
        };
        self.persona
            .iter()
            .chain(hist.iter())
            .map(Vec::as_slice)
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Keeps the last `max` tokens.
pub fn left_truncate(tokens: &mut Vec<TokenId>, max: usize) {
    if tokens.len() > max {
        tokens.drain(..tokens.len() - max);
    }
}

/// Persona sentences followed by the last `history_turns` turns, keeping the
/// most recent `max_tokens` tokens.
pub fn build_context(
    persona: &[Vec<TokenId>],
    history: &[Vec<TokenId>],
    history_turns: usize,
    max_tokens: usize,
) -> Vec<TokenId> {
    let window = &history[history.len().saturating_sub(history_turns)..];
    let mut context: Vec<TokenId> = persona.iter().chain(window.iter()).flatten().copied().collect();
    left_truncate(&mut context, max_tokens);
    context
}

/// Flattens dialogues into examples. A turn with neither persona nor history
/// (an opening line from a persona-less side) yields no example.
pub fn make_examples(corpus: &Corpus, vocab: &Vocab, cfg: &ExampleConfig) -> Vec<Example> {
    assert!(cfg.history_turns >= 1, "history_turns must be at least 1");
    let mut out = Vec::new();
    for (di, d) in corpus.dialogues.iter().enumerate() {
        let encoded: Vec<Vec<TokenId>> = d
            .turns
            .iter()
            .map(|t| {
                if t.tokens.is_empty() {
                    vocab.encode_text(&t.text)
                } else {
                    t.tokens.clone()
                }
            })
            .collect();
        for (ti, turn) in d.turns.iter().enumerate() {
            if cfg.sides == Sides::ModelSide && turn.speaker != Speaker::P2 {
                continue;
            }
            let persona: Vec<Vec<TokenId>> = d
                .persona_of(turn.speaker)
                .iter()
                .map(|s| vocab.encode_text(s))
                .collect();
            let history = encoded[..ti].to_vec();
            let context = build_context(&persona, &history, cfg.history_turns, cfg.max_context_tokens);
            if context.is_empty() || encoded[ti].is_empty() {
                continue;
            }
            out.push(Example {
                dialogue_id: di,
                turn_index: ti,
                speaker: turn.speaker,
                persona,
                history,
                context,
                response: encoded[ti].clone(),
                response_text: turn.text.clone(),
            });
        }
    }
    out
}
