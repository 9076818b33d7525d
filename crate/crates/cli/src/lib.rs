//! Pipeline commands behind the `rnr` binary: train, precompute, evaluate,
//! chat and serve.

pub mod commands;
pub mod config;
pub mod run;
