//! Live chat sessions between a person and one model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rnr_core::retnref::{Flag, Reply};

use crate::error::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub flag: Flag,
    pub retrieved_text: Option<String>,
    pub overlap: Option<f64>,
}

impl From<&Reply> for TraceView {
    fn from(r: &Reply) -> Self {
        TraceView {
            flag: r.trace.flag,
            retrieved_text: r.trace.retrieved_text.clone(),
            overlap: r.trace.overlap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub engagingness: u8,
    pub fluency: u8,
    pub consistency: u8,
    /// Index of the persona the person believes the model was given.
    pub persona_pick: u32,
}

impl Scores {
    pub fn validate(&self) -> Result<(), ApiError> {
        for (name, v) in [
            ("engagingness", self.engagingness),
            ("fluency", self.fluency),
            ("consistency", self.consistency),
        ] {
            if !(1..=5).contains(&v) {
                return Err(ApiError::bad_request("invalid_score", format!("{name} must be 1 to 5, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub variant: String,
    pub seed: u64,
    pub persona: Vec<String>,
    pub history: Vec<ChatTurn>,
    pub scores: Vec<Scores>,
}

impl Session {
    /// The persona is drawn once from `personas` with the session seed.
    pub fn new(session_id: String, variant: String, seed: u64, personas: &[Vec<String>]) -> Result<Self, ApiError> {
        if personas.is_empty() {
            return Err(ApiError::internal("no personas loaded"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let persona = personas[rng.gen_range(0..personas.len())].clone();
        Ok(Session {
            session_id,
            variant,
            seed,
            persona,
            history: Vec::new(),
            scores: Vec::new(),
        })
    }

    pub fn exchanges(&self) -> usize {
        self.history.iter().filter(|t| t.role == Role::Model).count()
    }
}

/// Session snapshot lines appended to `sessions.jsonl`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionSnapshot<'a> {
    pub timestamp: String,
    pub session: std::borrow::Cow<'a, Session>,
}
