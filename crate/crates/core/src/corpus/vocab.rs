use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Corpus, Split};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const SEP: TokenId = 4;

pub const RESERVED: [&str; 5] = ["__PAD__", "__UNK__", "__BOS__", "__EOS__", "__SEP__"];

const OOV_HEADER: &str = "#oov";

/// Token/id bijection plus training-split token frequencies.
///
/// Frequencies are kept for every training token, including the ones mapped
/// to UNK, so rare-word rates stay exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    freq: BTreeMap<String, u64>,
}

impl Vocab {
    pub fn build(corpus: &Corpus, min_freq: u64) -> Result<Self> {
        if corpus.split != Split::Train {
            return Err(Error::invalid("vocabulary must be built from the training split"));
        }
        let mut freq: BTreeMap<String, u64> = BTreeMap::new();
        for d in &corpus.dialogues {
            let texts = d
                .persona_self
                .iter()
                .chain(&d.persona_partner)
                .map(String::as_str)
                .chain(d.turns.iter().map(|t| t.text.as_str()));
            for text in texts {
                for tok in super::tokenize(text) {
                    *freq.entry(tok).or_default() += 1;
                }
            }
        }
        if freq.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let mut kept: Vec<(&String, &u64)> = freq.iter().filter(|(_, &c)| c >= min_freq).collect();
        if kept.is_empty() {
            return Err(Error::Degenerate("vocabulary"));
        }
        kept.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.clone()))
            .collect();
        Ok(Self::from_parts(tokens, freq))
    }

    fn from_parts(tokens: Vec<String>, freq: BTreeMap<String, u64>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { tokens, ids, freq }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED[UNK as usize])
    }

    /// Training-split count; zero for unseen tokens.
    pub fn frequency(&self, token: &str) -> u64 {
        self.freq.get(token).copied().unwrap_or(0)
    }

    pub fn frequencies(&self) -> &BTreeMap<String, u64> {
        &self.freq
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        self.encode(&super::tokenize(text))
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Decodes, drops reserved control tokens and joins with spaces.
    pub fn decode_text(&self, ids: &[TokenId]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS | SEP))
            .map(|&i| self.token(i))
            .collect();
        super::detokenize(&words)
    }

    /// `token<TAB>count` ordered by id, followed by the below-threshold
    /// training tokens under an `#oov` line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(&format!("{t}\t{}\n", self.frequency(t)));
        }
        s.push_str(OOV_HEADER);
        s.push('\n');
        for (t, c) in &self.freq {
            if !self.ids.contains_key(t) {
                s.push_str(&format!("{t}\t{c}\n"));
            }
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut freq = BTreeMap::new();
        let mut oov = false;
        for (i, line) in text.lines().enumerate() {
            if line == OOV_HEADER {
                oov = true;
                continue;
            }
            let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: "vocab".into(),
                line: i + 1,
                message: "expected token<TAB>count".into(),
            })?;
            let count: u64 = count.parse().map_err(|_| Error::Parse {
                path: "vocab".into(),
                line: i + 1,
                message: format!("bad count `{count}`"),
            })?;
            if count > 0 {
                freq.insert(tok.to_string(), count);
            }
            if !oov {
                tokens.push(tok.to_string());
            }
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("vocabulary file does not start with reserved tokens"));
        }
        Ok(Self::from_parts(tokens, freq))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized vocabulary; binds checkpoints to it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Speaker, Turn};

    fn corpus(texts: &[&str]) -> Corpus {
        let turns = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Turn::new(if i % 2 == 0 { Speaker::P1 } else { Speaker::P2 }, t))
            .collect();
        Corpus {
            dialogues: vec![Dialogue {
                persona_self: vec![],
                persona_partner: vec![],
                turns,
            }],
            split: Split::Train,
        }
    }

    #[test]
    fn min_freq_maps_rare_to_unk() {
        let v = Vocab::build(&corpus(&["a a b"]), 2).unwrap();
        assert!(v.contains("a"));
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.frequency("a"), 2);
        assert_eq!(v.frequency("b"), 1);
    }

    #[test]
    fn min_freq_one_keeps_all_seen() {
        let v = Vocab::build(&corpus(&["a a b"]), 1).unwrap();
        assert_ne!(v.id("b"), UNK);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.len(), RESERVED.len() + 2);
    }

    #[test]
    fn threshold_above_max_is_degenerate() {
        let err = Vocab::build(&corpus(&["a a b"]), 3).unwrap_err();
        assert_eq!(err.to_string(), "degenerate vocabulary");
    }

    #[test]
    fn empty_corpus_errors() {
        let c = Corpus {
            dialogues: vec![],
            split: Split::Train,
        };
        assert!(Vocab::build(&c, 1).is_err());
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocab::build(&corpus(&["x"]), 1).unwrap();
        assert_eq!(v.id("__PAD__"), PAD);
        assert_eq!(v.id("__SEP__"), SEP);
        assert_eq!(v.token(EOS), "__EOS__");
    }

    #[test]
    fn tsv_round_trip_keeps_oov_frequencies() {
        let v = Vocab::build(&corpus(&["a a b c c c", "d"]), 2).unwrap();
        let back = Vocab::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.frequency("b"), 1);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn decode_encode() {
        let v = Vocab::build(&corpus(&["hello there friend"]), 1).unwrap();
        let toks = ["hello", "friend", "stranger"];
        assert_eq!(v.decode(&v.encode(&toks)), ["hello", "friend", "__UNK__"]);
    }
}
