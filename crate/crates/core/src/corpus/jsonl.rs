use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, Speaker, Split, Turn};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    persona_self: Vec<String>,
    #[serde(default)]
    persona_partner: Vec<String>,
    turns: Vec<TurnRecord>,
}

pub fn load_jsonl(path: &Path, split: Split) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string(), split)
}

pub fn parse_jsonl(text: &str, origin: &str, split: Split) -> Result<Corpus> {
    let mut dialogues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let d = Dialogue {
            persona_self: rec.persona_self,
            persona_partner: rec.persona_partner,
            turns: rec
                .turns
                .into_iter()
                .map(|t| Turn::new(t.speaker, &t.text))
                .collect(),
        };
        d.validate().map_err(|e| err(e.to_string()))?;
        dialogues.push(d);
    }
    Ok(Corpus { dialogues, split })
}

/// One compact JSON object per dialogue, newline terminated.
pub fn export_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for d in &corpus.dialogues {
        let rec = DialogueRecord {
            persona_self: d.persona_self.clone(),
            persona_partner: d.persona_partner.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn save_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, export_jsonl(corpus).as_bytes())
}
