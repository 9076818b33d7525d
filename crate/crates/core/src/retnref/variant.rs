use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_context, Example, TokenId, SEP};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "s2s")]
    Seq2Seq,
    #[serde(rename = "retnref")]
    RetNRef,
    /// Persona clipped from the generator input.
    #[serde(rename = "retnref+")]
    RetNRefPlus,
    /// `RetNRefPlus` input with the copy fix applied after decoding.
    #[serde(rename = "retnref++")]
    RetNRefPlusPlus,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Seq2Seq,
        Variant::RetNRef,
        Variant::RetNRefPlus,
        Variant::RetNRefPlusPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Seq2Seq => "s2s",
            Variant::RetNRef => "retnref",
            Variant::RetNRefPlus => "retnref+",
            Variant::RetNRefPlusPlus => "retnref++",
        }
    }

    pub fn uses_retrieval(self) -> bool {
        self != Variant::Seq2Seq
    }

    pub fn clips_persona(self) -> bool {
        matches!(self, Variant::RetNRefPlus | Variant::RetNRefPlusPlus)
    }

    pub fn copy_fix(self) -> bool {
        self == Variant::RetNRefPlusPlus
    }

    /// Variant whose generator input this one shares; `++` reads the same
    /// input as `+` and so uses the same trained generator.
    pub fn input_family(self) -> Variant {
        match self {
            Variant::RetNRefPlusPlus => Variant::RetNRefPlus,
            v => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "variant",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub overlap_threshold: f64,
    /// History turns kept by the persona-clipped variants; `None` keeps the
    /// whole history.
    pub history_turns_plus: Option<usize>,
    /// History turns kept by `s2s` and `retnref`.
    pub history_turns: usize,
    pub max_context_tokens: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            overlap_threshold: 0.6,
            history_turns_plus: Some(2),
            history_turns: 2,
            max_context_tokens: 128,
        }
    }
}

impl VariantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return Err(Error::invalid("overlap_threshold must lie in (0, 1)"));
        }
        if self.max_context_tokens < 2 || self.history_turns == 0 {
            return Err(Error::invalid("max_context_tokens must be at least 2 and history_turns at least 1"));
        }
        Ok(())
    }
}

/// Generator input for `variant`. Retrieval variants append `SEP` and the
/// retrieved tokens; left truncation only ever removes dialogue tokens, and
/// cuts the retrieval from its left only when it alone exceeds the budget.
pub fn augment_input(
    persona: &[Vec<TokenId>],
    history: &[Vec<TokenId>],
    retrieved: &[TokenId],
    variant: Variant,
    cfg: &VariantConfig,
) -> Vec<TokenId> {
    let max = cfg.max_context_tokens;
    if !variant.uses_retrieval() {
        return build_context(persona, history, cfg.history_turns, max);
    }
    let tail_room = max - 1;
    let retrieved = &retrieved[retrieved.len().saturating_sub(tail_room)..];
    let room = tail_room - retrieved.len();
    let mut out = if variant.clips_persona() {
        let turns = cfg.history_turns_plus.unwrap_or(history.len());
        build_context(&[], history, turns, room)
    } else {
        build_context(persona, history, cfg.history_turns, room)
    };
    out.push(SEP);
    out.extend_from_slice(retrieved);
    out
}

/// [`augment_input`] over an example's persona and history.
pub fn augment_example(ex: &Example, retrieved: &[TokenId], variant: Variant, cfg: &VariantConfig) -> Vec<TokenId> {
    augment_input(&ex.persona, &ex.history, retrieved, variant, cfg)
}
