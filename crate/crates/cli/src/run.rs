//! Artifact layout of an output directory and the loaders shared by the
//! commands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rnr_core::checkpoint::Checkpoint;
use rnr_core::corpus::{make_examples, Corpus, Example, Split, Vocab};
use rnr_core::generator::GeneratorModel;
use rnr_core::io::write_json;
use rnr_core::retnref::Variant;
use rnr_core::retriever::{CandidateIndex, RetrieverModel};

use crate::config::RunConfig;

/// A resolved config bound to an output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub hash: String,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: &'a str,
    config: &'a RunConfig,
}

/// Fields every JSON report starts with.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub vocab_hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig, out: &Path) -> Self {
        let hash = cfg.hash();
        Run {
            cfg,
            out: out.to_path_buf(),
            hash,
        }
    }

    /// Logs the resolved config and stores it next to the artifacts.
    pub fn record(&self, command: &str) -> Result<()> {
        log::info!("{command}: seed {} config {}", self.cfg.seed, self.hash);
        log::debug!("{}", serde_json::to_string(&self.cfg)?);
        let rec = RunRecord {
            command,
            config_hash: &self.hash,
            config: &self.cfg,
        };
        write_json(&self.out.join("runs").join(format!("{command}.json")), &rec)?;
        Ok(())
    }

    pub fn provenance(&self, vocab: &Vocab) -> Provenance {
        Provenance {
            config_hash: self.hash.clone(),
            vocab_hash: vocab.hash(),
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.out.join("vocab.tsv")
    }

    pub fn retriever_path(&self) -> PathBuf {
        self.out.join("retriever.ckpt")
    }

    pub fn index_path(&self) -> PathBuf {
        self.out.join("index.ckpt")
    }

    pub fn augmented_path(&self, source: &str, split: Split) -> PathBuf {
        self.out.join("augmented").join(source).join(format!("{split}.jsonl"))
    }

    pub fn generator_path(&self, variant: Variant, source: &str) -> PathBuf {
        self.out.join("generators").join(format!("{}__{source}.ckpt", variant.name()))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.out.join("reports").join(name)
    }

    pub fn generations_path(&self, variant: &str) -> PathBuf {
        self.out.join("generations").join(format!("{variant}.jsonl"))
    }

    pub fn split_path(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.cfg.data.train,
            Split::Valid => &self.cfg.data.valid,
            Split::Test => &self.cfg.data.test,
        }
    }

    pub fn corpus(&self, split: Split) -> Result<Corpus> {
        let path = self.split_path(split);
        Corpus::load(path, split).with_context(|| format!("loading {split} corpus {}", path.display()))
    }

    pub fn examples(&self, split: Split, vocab: &Vocab) -> Result<Vec<Example>> {
        let ex = make_examples(&self.corpus(split)?, vocab, &self.cfg.examples);
        if ex.is_empty() {
            bail!("{split} corpus yields no examples");
        }
        Ok(ex)
    }

    pub fn load_vocab(&self) -> Result<Vocab> {
        let p = self.vocab_path();
        if !p.exists() {
            bail!("missing {}; run train-retriever first", p.display());
        }
        Ok(Vocab::load(&p)?)
    }

    /// Sets the run's config hash and writes atomically.
    pub fn save_checkpoint(&self, mut ck: Checkpoint, path: &Path) -> Result<()> {
        ck.metadata.config_hash = Some(self.hash.clone());
        ck.save(path)?;
        Ok(())
    }

    fn checkpoint(&self, path: &Path, kind: &str, vocab: &Vocab, hint: &str) -> Result<Checkpoint> {
        if !path.exists() {
            bail!("missing {}; run {hint} first", path.display());
        }
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(kind, path)?;
        ck.verify_vocab(&vocab.hash())?;
        if ck.metadata.config_hash.as_deref() != Some(self.hash.as_str()) {
            log::warn!(
                "{} was made with config {}, this run is {}",
                path.display(),
                ck.metadata.config_hash.as_deref().unwrap_or("unknown"),
                self.hash
            );
        }
        Ok(ck)
    }

    pub fn load_retriever(&self, vocab: &Vocab) -> Result<RetrieverModel> {
        let ck = self.checkpoint(&self.retriever_path(), "retriever", vocab, "train-retriever")?;
        Ok(RetrieverModel::from_checkpoint(&ck)?)
    }

    pub fn load_index(&self, vocab: &Vocab) -> Result<CandidateIndex> {
        let ck = self.checkpoint(&self.index_path(), "index", vocab, "build-index")?;
        Ok(CandidateIndex::from_checkpoint(&ck)?)
    }

    pub fn load_generator(&self, variant: Variant, source: &str, vocab: &Vocab) -> Result<GeneratorModel> {
        let path = self.generator_path(variant, source);
        let ck = self.checkpoint(&path, "generator", vocab, "train-generator")?;
        Ok(GeneratorModel::from_checkpoint(&ck)?)
    }
}

/// Retrieval source a variant is trained and served with by default.
pub fn default_source(variant: Variant) -> &'static str {
    if variant.uses_retrieval() {
        "memnet"
    } else {
        "none"
    }
}
