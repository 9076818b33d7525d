#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rnr_cli::commands;
use rnr_cli::config::RunConfig;
use rnr_cli::run::{default_source, Run};
use rnr_core::retnref::Variant;

pub fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Seconds-scale models: the validation split doubles as training data.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.train = repo("fixtures/valid.txt");
    cfg.data.valid = repo("fixtures/valid.txt");
    cfg.data.test = repo("fixtures/test.txt");
    cfg.retriever.dim = 16;
    cfg.retriever.epochs = 3;
    cfg.retriever.batch_size = 16;
    cfg.generator.emb_dim = 16;
    cfg.generator.hidden = 16;
    cfg.generator.layers = 1;
    cfg.generator.max_context_tokens = 32;
    cfg.generator.epochs = 2;
    cfg.variant.max_context_tokens = 32;
    cfg.decode.max_decode_tokens = 12;
    cfg.resolve(Some(3)).unwrap()
}

/// Retriever, index, memnet and none retrievals, one generator per variant.
pub fn tiny_pipeline(out: &Path) -> Run {
    let run = Run::new(tiny_config(), out);
    commands::cmd_train_retriever(&run).unwrap();
    commands::cmd_build_index(&run).unwrap();
    for s in ["none", "memnet"] {
        commands::cmd_precompute(&run, s, false).unwrap();
    }
    for v in Variant::ALL {
        commands::cmd_train_generator(&run, v, default_source(v)).unwrap();
    }
    run
}
