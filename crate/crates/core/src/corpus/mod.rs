//! Dialogue datasets: types, loaders, tokenizer, vocabulary and the
//! flattening of dialogues into context/response examples.

mod convai2;
mod examples;
mod jsonl;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use convai2::{load_convai2, parse_convai2};
pub use examples::{build_context, left_truncate, make_examples, Example, ExampleConfig, Sides};
pub use jsonl::{export_jsonl, load_jsonl, parse_jsonl, save_jsonl};
pub use tokenize::{detokenize, tokenize};
pub use vocab::{TokenId, Vocab, BOS, EOS, PAD, RESERVED, SEP, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    P1,
    P2,
}

impl Speaker {
    pub fn other(self) -> Self {
        match self {
            Speaker::P1 => Speaker::P2,
            Speaker::P2 => Speaker::P1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Filled by [`Corpus::bind`].
    pub tokens: Vec<TokenId>,
}

impl Turn {
    pub fn new(speaker: Speaker, text: &str) -> Self {
        Turn {
            speaker,
            text: text.to_string(),
            tokens: Vec::new(),
        }
    }
}

/// Persona sentences plus alternating turns. `persona_self` belongs to the
/// replying side (`P2`), `persona_partner` to `P1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub persona_self: Vec<String>,
    pub persona_partner: Vec<String>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid("dialogue without turns"));
        }
        for w in self.turns.windows(2) {
            if w[0].speaker == w[1].speaker {
                return Err(Error::invalid("turns do not alternate speakers"));
            }
        }
        if self.turns.iter().any(|t| t.text.trim().is_empty()) {
            return Err(Error::invalid("empty turn text"));
        }
        Ok(())
    }

    pub fn persona_of(&self, speaker: Speaker) -> &[String] {
        match speaker {
            Speaker::P2 => &self.persona_self,
            Speaker::P1 => &self.persona_partner,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Unknown {
                kind: "split",
                name: other.into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub split: Split,
}

impl Corpus {
    /// Loads by extension: `.jsonl` is the native format, anything else is
    /// read as ConvAI2 text.
    pub fn load(path: &std::path::Path, split: Split) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => load_jsonl(path, split),
            _ => load_convai2(path, split),
        }
    }

    /// Fills every turn's token ids.
    pub fn bind(&mut self, vocab: &Vocab) {
        for d in &mut self.dialogues {
            for t in &mut d.turns {
                t.tokens = vocab.encode_text(&t.text);
            }
        }
    }

    pub fn num_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    /// Distinct persona sets, in first-seen order.
    pub fn personas(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        for d in &self.dialogues {
            for p in [&d.persona_self, &d.persona_partner] {
                if !p.is_empty() && !out.contains(p) {
                    out.push(p.clone());
                }
            }
        }
        out
    }
}
