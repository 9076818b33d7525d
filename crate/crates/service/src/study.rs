//! Blind A/B studies: items cut from corpus dialogues, per-annotator
//! servings with a seeded side swap, and an append-only event log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rnr_core::analysis::AbResult;
use rnr_core::corpus::{Corpus, Speaker, TokenId, Vocab};
use rnr_core::retnref::{Flag, Responder, Turns};

use crate::error::ApiError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub model_a: String,
    pub model_b: String,
    pub corpus: String,
    pub judgments_per_item: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixTurn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub flag: Flag,
}

/// One dialogue prefix with both models' replies. Server side only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: usize,
    pub dialogue_id: usize,
    pub prefix: Vec<PrefixTurn>,
    /// Reply of `model_a`.
    pub first: ModelResponse,
    /// Reply of `model_b`.
    pub second: ModelResponse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "unsure")]
    Unsure,
}

impl std::str::FromStr for Choice {
    type Err = ApiError;
    fn from_str(s: &str) -> Result<Self, ApiError> {
        match s {
            "A" => Ok(Choice::A),
            "B" => Ok(Choice::B),
            "unsure" => Ok(Choice::Unsure),
            other => Err(ApiError::bad_request(
                "invalid_choice",
                format!("choice must be A, B or unsure, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        study_id: String,
        spec: StudySpec,
        items: Vec<Item>,
    },
    Served {
        item_id: usize,
        annotator: String,
        /// `model_b`'s reply is shown in position A.
        swapped: bool,
    },
    Judged {
        item_id: usize,
        annotator: String,
        choice: Choice,
        timestamp: String,
    },
}

/// What an annotator sees: positions only, never model names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientItem {
    pub item_id: usize,
    pub prefix: Vec<PrefixTurn>,
    pub response_a: String,
    pub response_b: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_id: usize,
    pub annotator: String,
    pub choice: Choice,
    pub swapped: bool,
    pub timestamp: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ack {
    Recorded,
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    /// How `model_a`'s reply was produced.
    pub flag: Flag,
    pub a_wins: u64,
    pub b_wins: u64,
    pub ties: u64,
    pub win_rate: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub study_id: String,
    pub model_a: String,
    pub model_b: String,
    pub judgments: usize,
    pub overall: AbResult,
    pub by_flag: Vec<SplitRow>,
}

#[derive(Debug)]
pub struct Study {
    pub study_id: String,
    pub spec: StudySpec,
    pub items: Vec<Item>,
    servings: HashMap<(usize, String), bool>,
    served: Vec<usize>,
    judged: HashMap<(usize, String), Choice>,
    judgments: Vec<Judgment>,
}

fn swap_rng(seed: u64, item: usize, serving: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((item as u64) << 32) | serving as u64);
    rng.gen()
}

/// Uniform cut turn in `2..=len-1`: at least two turns of context and a
/// recorded reply to compare against. `None` for dialogues under 3 turns.
pub fn cut_turn(seed: u64, dialogue_id: usize, len: usize) -> Option<usize> {
    if len < 3 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(dialogue_id as u64);
    Some(rng.gen_range(2..len))
}

impl Study {
    pub fn new(study_id: String, spec: StudySpec, items: Vec<Item>) -> Result<Self, ApiError> {
        if spec.judgments_per_item == 0 {
            return Err(ApiError::bad_request("invalid_request", "judgments_per_item must be at least 1"));
        }
        if items.is_empty() {
            return Err(ApiError::bad_request("invalid_request", "study has no items"));
        }
        if items.iter().enumerate().any(|(i, it)| it.item_id != i) {
            return Err(ApiError::bad_request("invalid_request", "item ids must be 0..n in order"));
        }
        Ok(Study {
            study_id,
            served: vec![0; items.len()],
            spec,
            items,
            servings: HashMap::new(),
            judged: HashMap::new(),
            judgments: Vec::new(),
        })
    }

    pub fn created_event(&self) -> Event {
        Event::Created {
            study_id: self.study_id.clone(),
            spec: self.spec.clone(),
            items: self.items.clone(),
        }
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }

    fn client_item(&self, item_id: usize, swapped: bool) -> ClientItem {
        let it = &self.items[item_id];
        let (a, b) = if swapped { (&it.second, &it.first) } else { (&it.first, &it.second) };
        ClientItem {
            item_id,
            prefix: it.prefix.clone(),
            response_a: a.text.clone(),
            response_b: b.text.clone(),
        }
    }

    /// The annotator's pending item, else a fresh one. The returned event,
    /// if any, must be logged and applied.
    pub fn next_item(&self, annotator: &str) -> Option<(ClientItem, Option<Event>)> {
        let pending = self
            .servings
            .iter()
            .filter(|((item, who), _)| who == annotator && !self.judged.contains_key(&(*item, who.clone())))
            .min_by_key(|((item, _), _)| *item);
        if let Some(((item, _), &swapped)) = pending {
            return Some((self.client_item(*item, swapped), None));
        }
        let key = |i: usize| (i, annotator.to_string());
        let item = (0..self.items.len())
            .find(|&i| self.served[i] < self.spec.judgments_per_item && !self.servings.contains_key(&key(i)))?;
        let swapped = swap_rng(self.spec.seed, item, self.served[item]);
        let ev = Event::Served {
            item_id: item,
            annotator: annotator.to_string(),
            swapped,
        };
        Some((self.client_item(item, swapped), Some(ev)))
    }

    /// Validates a judgment. `Ok(None)` is an exact duplicate.
    pub fn judge(&self, item_id: usize, annotator: &str, choice: Choice) -> Result<Option<Event>, ApiError> {
        if item_id >= self.items.len() {
            return Err(ApiError::not_found("unknown_item", format!("no item {item_id}")));
        }
        let key = (item_id, annotator.to_string());
        if !self.servings.contains_key(&key) {
            return Err(ApiError::conflict("not_served", "item was not served to this annotator"));
        }
        match self.judged.get(&key) {
            Some(&c) if c == choice => Ok(None),
            Some(_) => Err(ApiError::conflict("already_judged", "annotator already judged this item")),
            None => Ok(Some(Event::Judged {
                item_id,
                annotator: annotator.to_string(),
                choice,
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            })),
        }
    }

    pub fn apply(&mut self, ev: &Event) -> Result<(), ApiError> {
        match ev {
            Event::Created { .. } => Err(ApiError::internal("log has a second header")),
            Event::Served {
                item_id,
                annotator,
                swapped,
            } => {
                if *item_id >= self.items.len() {
                    return Err(ApiError::internal(format!("serving of unknown item {item_id}")));
                }
                if self.servings.insert((*item_id, annotator.clone()), *swapped).is_none() {
                    self.served[*item_id] += 1;
                }
                Ok(())
            }
            Event::Judged {
                item_id,
                annotator,
                choice,
                timestamp,
            } => {
                let key = (*item_id, annotator.clone());
                let &swapped = self
                    .servings
                    .get(&key)
                    .ok_or_else(|| ApiError::internal(format!("judgment of unserved item {item_id}")))?;
                if self.judged.insert(key, *choice).is_some() {
                    return Err(ApiError::internal(format!("second judgment of item {item_id}")));
                }
                self.judgments.push(Judgment {
                    item_id: *item_id,
                    annotator: annotator.clone(),
                    choice: *choice,
                    swapped,
                    timestamp: timestamp.clone(),
                });
                Ok(())
            }
        }
    }

    /// Win rates with positions mapped back to models, overall and split
    /// by how `model_a`'s reply was produced.
    pub fn results(&self) -> Result<StudyResults, ApiError> {
        let mut counts = [[0u64; 3]; 2];
        for j in &self.judgments {
            let split = usize::from(self.items[j.item_id].first.flag == Flag::Generated);
            let outcome = match (j.choice, j.swapped) {
                (Choice::Unsure, _) => 2,
                (Choice::A, false) | (Choice::B, true) => 0,
                (Choice::A, true) | (Choice::B, false) => 1,
            };
            counts[split][outcome] += 1;
        }
        let total = |k: usize| counts[0][k] + counts[1][k];
        let overall = AbResult::from_counts(total(0), total(1), total(2))
            .map_err(|e| ApiError::unprocessable("no_decisive_judgments", e.to_string()))?;
        let by_flag = [Flag::Copied, Flag::Generated]
            .into_iter()
            .zip(counts)
            .map(|(flag, [a, b, t])| {
                let r = AbResult::from_counts(a, b, t).ok();
                SplitRow {
                    flag,
                    a_wins: a,
                    b_wins: b,
                    ties: t,
                    win_rate: r.as_ref().map(|r| r.win_rate),
                    p_value: r.map(|r| r.p_value),
                }
            })
            .collect();
        Ok(StudyResults {
            study_id: self.study_id.clone(),
            model_a: self.spec.model_a.clone(),
            model_b: self.spec.model_b.clone(),
            judgments: self.judgments.len(),
            overall,
            by_flag,
        })
    }

    /// Rebuilds a study from its log. A torn final line (no newline) from an
    /// interrupted write is ignored.
    pub fn replay(path: &Path) -> Result<Self, ApiError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        let complete = if text.ends_with('\n') { text.as_str() } else { &text[..text.rfind('\n').map_or(0, |i| i + 1)] };
        let mut lines = complete.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse = |n: usize, l: &str| -> Result<Event, ApiError> {
            serde_json::from_str(l).map_err(|e| ApiError::internal(format!("{}:{}: {e}", path.display(), n + 1)))
        };
        let (n, first) = lines
            .next()
            .ok_or_else(|| ApiError::internal(format!("{}: empty study log", path.display())))?;
        let Event::Created { study_id, spec, items } = parse(n, first)? else {
            return Err(ApiError::internal(format!("{}: log must start with a created event", path.display())));
        };
        let mut study = Study::new(study_id, spec, items)?;
        for (n, l) in lines {
            study.apply(&parse(n, l)?)?;
        }
        Ok(study)
    }
}

/// Single writer over one study's log file.
#[derive(Debug)]
pub struct StudyLog {
    path: PathBuf,
    file: File,
}

impl StudyLog {
    pub fn create(path: &Path, study: &Study) -> Result<Self, ApiError> {
        let io = |e: std::io::Error| ApiError::internal(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new().create_new(true).append(true).open(path).map_err(io)?;
        file.write_all(line(&study.created_event()).as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)?;
        Ok(StudyLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn open(path: &Path) -> Result<Self, ApiError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        Ok(StudyLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, ev: &Event) -> Result<(), ApiError> {
        let io = |e: std::io::Error| ApiError::internal(format!("{}: {e}", self.path.display()));
        self.file.write_all(line(ev).as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

fn line(ev: &Event) -> String {
    let mut s = serde_json::to_string(ev).expect("serializable event");
    s.push('\n');
    s
}

/// A study plus its optional log; every event is logged before it is applied.
#[derive(Debug)]
pub struct StudyHandle {
    pub study: Study,
    pub log: Option<StudyLog>,
}

impl StudyHandle {
    pub fn record(&mut self, ev: Event) -> Result<(), ApiError> {
        if let Some(log) = &mut self.log {
            log.append(&ev)?;
        }
        self.study.apply(&ev)
    }
}

/// Cuts each eligible dialogue at a seeded turn and asks both models for
/// the next reply. At most `limit` items.
pub fn build_items(
    model_a: &dyn Responder,
    model_b: &dyn Responder,
    corpus: &Corpus,
    vocab: &Vocab,
    seed: u64,
    limit: Option<usize>,
) -> rnr_core::Result<Vec<Item>> {
    let mut items = Vec::new();
    for (dialogue_id, d) in corpus.dialogues.iter().enumerate() {
        if limit.is_some_and(|n| items.len() >= n) {
            break;
        }
        let Some(cut) = cut_turn(seed, dialogue_id, d.turns.len()) else { continue };
        let reply = &d.turns[cut];
        let persona: Vec<Vec<TokenId>> = d.persona_of(reply.speaker).iter().map(|s| vocab.encode_text(s)).collect();
        let history: Vec<Vec<TokenId>> = d.turns[..cut].iter().map(|t| vocab.encode_text(&t.text)).collect();
        let turns = Turns {
            persona: &persona,
            history: &history,
            gold: Some(&reply.text),
        };
        let answer = |m: &dyn Responder| -> rnr_core::Result<ModelResponse> {
            let r = m.respond(&turns)?;
            Ok(ModelResponse {
                text: r.text,
                flag: r.trace.flag,
            })
        };
        items.push(Item {
            item_id: items.len(),
            dialogue_id,
            prefix: d.turns[..cut]
                .iter()
                .map(|t| PrefixTurn {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
            first: answer(model_a)?,
            second: answer(model_b)?,
        });
    }
    Ok(items)
}
