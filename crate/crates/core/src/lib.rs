//! Retrieve-and-refine dialogue generation.
//!
//! An embedding retriever picks a training-set utterance for the current
//! dialogue context; a seq2seq LSTM generator reads the context with the
//! retrieved utterance appended after a separator token and writes the
//! reply. The crate also carries the evaluation statistics used to compare
//! variants (perplexity, word statistics, overlap bins, A/B win rates).

pub mod analysis;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod gradsuite;
pub mod io;
pub mod numerics;
pub mod retnref;
pub mod registry;
pub mod retriever;

pub use error::{Error, Result};
