use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Study logs and session snapshots; in-memory only when unset.
    pub state_dir: Option<PathBuf>,
    /// Static client files served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Seeds persona sampling for sessions created without a seed.
    pub seed: u64,
    /// Exchanges required before a session accepts scores.
    pub min_turns_for_scores: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            state_dir: None,
            static_dir: None,
            seed: 0,
            min_turns_for_scores: 1,
        }
    }
}
