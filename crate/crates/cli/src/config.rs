use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rnr_core::corpus::ExampleConfig;
use rnr_core::generator::{DecodeConfig, GeneratorConfig};
use rnr_core::retnref::{Variant, VariantConfig, SOURCES};
use rnr_core::retriever::RetrieverConfig;
use rnr_service::ServiceConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub min_freq: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: "fixtures/train.txt".into(),
            valid: "fixtures/valid.txt".into(),
            test: "fixtures/test.txt".into(),
            min_freq: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Top candidates reranked by the label on the training split.
    pub rerank_pool: usize,
    /// History turns the retriever reads; unset reads all.
    pub history_turns: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            rerank_pool: 100,
            history_turns: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Variant whose generators the perplexity ablation compares.
    pub ppl_variant: String,
    pub sources: Vec<String>,
    pub variants: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ppl_variant: Variant::RetNRef.name().into(),
            sources: SOURCES.iter().map(|s| s.to_string()).collect(),
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
        }
    }
}

/// Everything a run depends on, merged from the config file and flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Drives every stage; copied into the per-stage seeds.
    pub seed: u64,
    pub data: DataConfig,
    pub examples: ExampleConfig,
    pub retriever: RetrieverConfig,
    pub retrieval: RetrievalConfig,
    pub generator: GeneratorConfig,
    pub variant: VariantConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative data paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.train, &mut cfg.data.valid, &mut cfg.data.test] {
                if p.is_relative() && dir.join(&*p).exists() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies flag overrides and propagates the seed.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.retriever.seed = self.seed;
        self.generator.seed = self.seed;
        self.variant.validate()?;
        self.decode.validate()?;
        for v in &self.eval.variants {
            v.parse::<Variant>()?;
        }
        self.eval.ppl_variant.parse::<Variant>()?;
        Ok(self)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable config");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}
