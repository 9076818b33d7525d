use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rnr_core::analysis::{
    overlap_bins, ppl_rows, render_ab, render_overlap, render_ppl, render_word_stats, word_stats, AbResult,
    OverlapBins, PplRow, WordStatsRow,
};
use rnr_core::corpus::{Example, Split, TokenId, Vocab};
use rnr_core::generator::{train_generator, GeneratorModel, Seq2SeqPair, TrainReport};
use rnr_core::gradsuite::{grad_suite, SuiteReport};
use rnr_core::io::{write_atomic, write_json};
use rnr_core::retnref::{
    attach, augment_example, load_augmented, precompute_retrievals, responder_registry, save_augmented,
    AugmentedExample, Flag, GoldResponder, Mode, Pipeline, Reply, Responder, ResponderRegistry, RetrievalEnv,
    RetrieverResponder, Turns, Variant,
};
use rnr_core::retriever::{train_retriever, CandidateIndex, RetrieverModel};
use rnr_service::study::{Study, StudyResults};
use rnr_service::AppState;

use crate::run::{default_source, Provenance, Run};

const SPLITS: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieverReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub examples: usize,
    pub candidates_seen: usize,
    pub epoch_loss: Vec<f64>,
}

pub fn cmd_train_retriever(run: &Run) -> Result<RetrieverReport> {
    run.record("train-retriever")?;
    let t = Instant::now();
    let corpus = run.corpus(Split::Train)?;
    let vocab = Vocab::build(&corpus, run.cfg.data.min_freq)?;
    vocab.save(&run.vocab_path())?;
    let examples = run.examples(Split::Train, &vocab)?;
    let (model, epoch_loss) = train_retriever(&examples, &vocab, &run.cfg.retriever)?;
    run.save_checkpoint(model.to_checkpoint(), &run.retriever_path())?;
    let report = RetrieverReport {
        provenance: run.provenance(&vocab),
        examples: examples.len(),
        candidates_seen: corpus.num_turns(),
        epoch_loss,
    };
    write_json(&run.report_path("retriever.json"), &report)?;
    log::info!("retriever trained on {} examples in {:.1?}", examples.len(), t.elapsed());
    Ok(report)
}

pub fn cmd_build_index(run: &Run) -> Result<usize> {
    run.record("build-index")?;
    let vocab = run.load_vocab()?;
    let model = run.load_retriever(&vocab)?;
    let index = CandidateIndex::build(&model, &run.corpus(Split::Train)?, &vocab)?;
    run.save_checkpoint(index.to_checkpoint(), &run.index_path())?;
    log::info!("index holds {} candidates", index.len());
    Ok(index.len())
}

fn retrieval_parts(run: &Run, vocab: &Vocab) -> Result<(Option<RetrieverModel>, Option<CandidateIndex>)> {
    let r = run.retriever_path().exists().then(|| run.load_retriever(vocab)).transpose()?;
    let i = run.index_path().exists().then(|| run.load_index(vocab)).transpose()?;
    Ok((r, i))
}

/// Writes one augmented JSONL file per split. Label-reading sources need
/// `ablation` off the training split.
pub fn cmd_precompute(run: &Run, source: &str, ablation: bool) -> Result<()> {
    run.record(&format!("precompute-{source}"))?;
    let vocab = run.load_vocab()?;
    let (retriever, index) = retrieval_parts(run, &vocab)?;
    for split in SPLITS {
        let t = Instant::now();
        let examples = run.examples(split, &vocab)?;
        let env = RetrievalEnv {
            retriever: retriever.as_ref(),
            index: index.as_ref(),
            split,
            mode: if ablation { Mode::Ablation } else { Mode::Deployment },
            rerank_pool: run.cfg.retrieval.rerank_pool,
            history_turns: run.cfg.retrieval.history_turns,
            seed: run.cfg.seed,
        };
        let aug = precompute_retrievals(&env, &examples, source)?;
        save_augmented(&run.augmented_path(source, split), &aug)?;
        log::info!("{source}/{split}: {} retrievals in {:.1?}", aug.len(), t.elapsed());
    }
    Ok(())
}

fn augmented(run: &Run, source: &str, split: Split, vocab: &Vocab) -> Result<Vec<AugmentedExample>> {
    let path = run.augmented_path(source, split);
    if !path.exists() {
        bail!("missing {}; run precompute --source {source} first", path.display());
    }
    let examples = run.examples(split, vocab)?;
    Ok(attach(&load_augmented(&path)?, &examples, vocab)?)
}

fn pairs(run: &Run, aug: &[AugmentedExample], variant: Variant) -> Vec<Seq2SeqPair> {
    aug.iter()
        .map(|a| Seq2SeqPair {
            input: augment_example(&a.example, &a.retrieved.tokens, variant, &run.cfg.variant),
            target: a.example.response.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub variant: String,
    pub source: String,
    #[serde(flatten)]
    pub train: TrainReport,
}

pub fn cmd_train_generator(run: &Run, variant: Variant, source: &str) -> Result<GeneratorReport> {
    run.record(&format!("train-generator-{}-{source}", variant.name()))?;
    let t = Instant::now();
    let vocab = run.load_vocab()?;
    let train = pairs(run, &augmented(run, source, Split::Train, &vocab)?, variant);
    let valid = pairs(run, &augmented(run, source, Split::Valid, &vocab)?, variant);
    let (model, train_report) = train_generator(&train, &valid, &vocab, &run.cfg.generator)?;
    run.save_checkpoint(model.to_checkpoint(), &run.generator_path(variant, source))?;
    let report = GeneratorReport {
        provenance: run.provenance(&vocab),
        variant: variant.name().into(),
        source: source.into(),
        train: train_report,
    };
    write_json(&run.report_path(&format!("generator__{}__{source}.json", variant.name())), &report)?;
    log::info!(
        "{} with {source}: best epoch {} of {} in {:.1?}",
        variant.name(),
        report.train.best_epoch + 1,
        report.train.train_loss.len(),
        t.elapsed()
    );
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub variant: String,
    pub rows: Vec<PplRow>,
}

/// Test perplexity of the `variant` generator trained with each source,
/// each on inputs augmented by that same source.
pub fn cmd_eval_ppl(run: &Run, variant: Variant, sources: &[String]) -> Result<PplReport> {
    run.record("eval-ppl")?;
    let vocab = run.load_vocab()?;
    let mut loaded: Vec<(String, GeneratorModel, Vec<Seq2SeqPair>)> = Vec::new();
    for s in sources {
        let model = run.load_generator(variant, s, &vocab)?;
        let test = pairs(run, &augmented(run, s, Split::Test, &vocab)?, variant);
        loaded.push((s.clone(), model, test));
    }
    let runs: Vec<(&str, &GeneratorModel, &[Seq2SeqPair])> =
        loaded.iter().map(|(s, m, p)| (s.as_str(), m, p.as_slice())).collect();
    let rows = ppl_rows(&runs)?;
    let report = PplReport {
        provenance: run.provenance(&vocab),
        variant: variant.name().into(),
        rows,
    };
    write_json(&run.report_path("ppl.json"), &report)?;
    write_atomic(&run.report_path("ppl.txt"), render_ppl(&report.rows).as_bytes())?;
    Ok(report)
}

/// One test-set reply, as written to the generations files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub dialogue_id: usize,
    pub turn_index: usize,
    pub text: String,
    pub flag: Flag,
    pub retrieved_text: Option<String>,
    pub overlap: Option<f64>,
    #[serde(skip)]
    pub tokens: Vec<TokenId>,
    #[serde(skip)]
    pub retrieved: Vec<TokenId>,
}

/// The shared pieces every responder needs.
pub struct Models {
    pub vocab: Arc<Vocab>,
    pub retriever: Option<Arc<RetrieverModel>>,
    pub index: Option<Arc<CandidateIndex>>,
}

impl Models {
    pub fn load(run: &Run) -> Result<Self> {
        let vocab = run.load_vocab()?;
        let (r, i) = retrieval_parts(run, &vocab)?;
        Ok(Models {
            vocab: Arc::new(vocab),
            retriever: r.map(Arc::new),
            index: i.map(Arc::new),
        })
    }

    pub fn pipeline(&self, run: &Run, variant: Variant) -> Result<Pipeline> {
        let generator = run.load_generator(variant, default_source(variant), &self.vocab)?;
        Ok(Pipeline {
            variant,
            generator: Arc::new(generator),
            retriever: self.retriever.clone(),
            index: self.index.clone(),
            vocab: self.vocab.clone(),
            config: run.cfg.variant.clone(),
            decode: run.cfg.decode.clone(),
            retriever_history: run.cfg.retrieval.history_turns,
        })
    }

    /// `name` is a variant, `retriever` or `human`.
    pub fn responder(&self, run: &Run, name: &str) -> Result<Arc<dyn Responder>> {
        match name {
            "retriever" => {
                let (Some(r), Some(i)) = (&self.retriever, &self.index) else {
                    bail!("the retriever responder needs retriever.ckpt and index.ckpt");
                };
                Ok(Arc::new(RetrieverResponder {
                    retriever: r.clone(),
                    index: i.clone(),
                    vocab: self.vocab.clone(),
                    history_turns: run.cfg.retrieval.history_turns,
                }))
            }
            "human" => Ok(Arc::new(GoldResponder {
                vocab: self.vocab.clone(),
            })),
            v => Ok(Arc::new(self.pipeline(run, v.parse()?)?)),
        }
    }
}

fn respond_all(responder: &dyn Responder, examples: &[Example]) -> Result<Vec<Generation>> {
    examples
        .par_iter()
        .map(|ex| {
            let turns = Turns {
                persona: &ex.persona,
                history: &ex.history,
                gold: Some(&ex.response_text),
            };
            let r: Reply = responder.respond(&turns)?;
            Ok(Generation {
                dialogue_id: ex.dialogue_id,
                turn_index: ex.turn_index,
                text: r.text,
                flag: r.trace.flag,
                retrieved_text: r.trace.retrieved_text,
                overlap: r.trace.overlap,
                tokens: r.tokens,
                retrieved: r.trace.retrieved,
            })
        })
        .collect()
}

/// Test-set replies of `name`, also written to `generations/<name>.jsonl`.
pub fn generate_test(run: &Run, models: &Models, name: &str) -> Result<Vec<Generation>> {
    let t = Instant::now();
    let responder = models.responder(run, name)?;
    let examples = run.examples(Split::Test, &models.vocab)?;
    let gens = respond_all(responder.as_ref(), &examples)?;
    let mut text = String::new();
    for g in &gens {
        text.push_str(&serde_json::to_string(g)?);
        text.push('\n');
    }
    write_atomic(&run.generations_path(name), text.as_bytes())?;
    log::info!("{name}: {} replies in {:.1?}", gens.len(), t.elapsed());
    Ok(gens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordStatsReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub rows: Vec<WordStatsRow>,
}

/// Word and rare-word statistics for each variant plus the retriever and
/// the human replies.
pub fn cmd_eval_stats(run: &Run, variants: &[String]) -> Result<WordStatsReport> {
    run.record("eval-stats")?;
    let models = Models::load(run)?;
    let mut names: Vec<String> = variants.to_vec();
    if models.retriever.is_some() && models.index.is_some() {
        names.push("retriever".into());
    }
    names.push("human".into());
    let mut rows = Vec::new();
    for name in &names {
        let gens = generate_test(run, &models, name)?;
        let texts: Vec<String> = gens.into_iter().map(|g| g.text).collect();
        rows.push(word_stats(name, &texts, &models.vocab)?);
    }
    let report = WordStatsReport {
        provenance: run.provenance(&models.vocab),
        rows,
    };
    write_json(&run.report_path("word_stats.json"), &report)?;
    write_atomic(&run.report_path("word_stats.txt"), render_word_stats(&report.rows).as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub method: String,
    #[serde(flatten)]
    pub bins: OverlapBins,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub rows: Vec<OverlapRow>,
}

/// Word overlap of final replies with their retrieval, binned. Variants
/// without retrieval are compared with the retriever's reply.
pub fn cmd_eval_overlap(run: &Run, variants: &[String]) -> Result<OverlapReport> {
    run.record("eval-overlap")?;
    let models = Models::load(run)?;
    let mut rows = Vec::new();
    let mut retrieved: Option<Vec<Vec<TokenId>>> = None;
    for name in variants {
        let v: Variant = name.parse()?;
        let gens = generate_test(run, &models, name)?;
        let pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = if v.uses_retrieval() {
            gens.into_iter().map(|g| (g.tokens, g.retrieved)).collect()
        } else {
            // Compared with what the retriever would have said for the same context.
            if retrieved.is_none() {
                let r = generate_test(run, &models, "retriever")?;
                retrieved = Some(r.into_iter().map(|g| g.tokens).collect());
            }
            gens.into_iter()
                .map(|g| g.tokens)
                .zip(retrieved.iter().flatten().cloned())
                .collect()
        };
        rows.push(OverlapRow {
            method: name.clone(),
            bins: overlap_bins(&pairs)?,
        });
    }
    let report = OverlapReport {
        provenance: run.provenance(&models.vocab),
        rows,
    };
    let table: Vec<(String, OverlapBins)> = report.rows.iter().map(|r| (r.method.clone(), r.bins.clone())).collect();
    write_json(&run.report_path("overlap.json"), &report)?;
    write_atomic(&run.report_path("overlap.txt"), render_overlap(&table).as_bytes())?;
    Ok(report)
}

/// Terminal chat with one variant. Reads until EOF or `/quit`.
pub fn cmd_chat(run: &Run, variant: Variant, input: impl BufRead, mut output: impl Write) -> Result<usize> {
    run.record("chat")?;
    let models = Models::load(run)?;
    let pipeline = models.pipeline(run, variant)?;
    let personas = run.corpus(Split::Test)?.personas();
    if personas.is_empty() {
        bail!("test corpus has no personas to assign");
    }
    let persona_text = &personas[ChaCha8Rng::seed_from_u64(run.cfg.seed).gen_range(0..personas.len())];
    writeln!(output, "persona:")?;
    for p in persona_text {
        writeln!(output, "  {p}")?;
    }
    let persona: Vec<Vec<TokenId>> = persona_text.iter().map(|s| models.vocab.encode_text(s)).collect();
    let mut history: Vec<Vec<TokenId>> = Vec::new();
    let mut replies = 0;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        if text == "/quit" {
            break;
        }
        if text.is_empty() {
            continue;
        }
        history.push(models.vocab.encode_text(text));
        let reply = pipeline.respond(&Turns {
            persona: &persona,
            history: &history,
            gold: None,
        })?;
        let flag = match reply.trace.flag {
            Flag::Copied => "copied",
            Flag::Generated => "generated",
        };
        writeln!(output, "model [{flag}]: {}", reply.text)?;
        history.push(reply.tokens);
        replies += 1;
    }
    Ok(replies)
}

/// Every variant with a trained generator, plus `retriever` and `human`.
pub fn build_registry(run: &Run, models: &Models) -> Result<ResponderRegistry> {
    let mut reg = responder_registry();
    for v in Variant::ALL {
        if run.generator_path(v, default_source(v)).exists() {
            reg.register(v.name(), models.responder(run, v.name())?);
        }
    }
    if models.retriever.is_some() && models.index.is_some() {
        reg.register("retriever", models.responder(run, "retriever")?);
    }
    reg.register("human", models.responder(run, "human")?);
    Ok(reg)
}

pub fn app_state(run: &Run) -> Result<AppState> {
    let models = Models::load(run)?;
    let registry = build_registry(run, &models)?;
    let mut corpora = HashMap::new();
    for split in [Split::Valid, Split::Test] {
        corpora.insert(split.to_string(), run.corpus(split)?);
    }
    let personas = corpora["test"].personas();
    Ok(AppState::new(
        run.cfg.service.clone(),
        models.vocab.clone(),
        registry,
        personas,
        corpora,
    )?)
}

pub fn cmd_serve(run: &Run) -> Result<()> {
    run.record("serve")?;
    let state = Arc::new(app_state(run)?);
    log::info!("models: {}", state.models.names().join(", "));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(rnr_service::serve(state))?;
    Ok(())
}

/// Results table of a study log: overall, then split by how model A's reply
/// was produced.
pub fn render_study(r: &StudyResults) -> String {
    let mut rows = vec![(format!("{} vs {}", r.model_a, r.model_b), r.overall.clone())];
    for s in &r.by_flag {
        if let (Some(w), Some(p)) = (s.win_rate, s.p_value) {
            let flag = match s.flag {
                Flag::Copied => "retrieved",
                Flag::Generated => "generated",
            };
            rows.push((
                format!("{} ({flag}) vs {}", r.model_a, r.model_b),
                AbResult {
                    a_wins: s.a_wins,
                    b_wins: s.b_wins,
                    ties: s.ties,
                    win_rate: w,
                    p_value: p,
                },
            ));
        }
    }
    render_ab(&rows)
}

pub fn cmd_ab_results(run: &Run, log_path: &Path) -> Result<StudyResults> {
    run.record("ab-results")?;
    let study = Study::replay(log_path).with_context(|| format!("replaying {}", log_path.display()))?;
    let results = study.results()?;
    write_json(&run.report_path(&format!("ab_{}.json", results.study_id)), &results)?;
    write_atomic(
        &run.report_path(&format!("ab_{}.txt", results.study_id)),
        render_study(&results).as_bytes(),
    )?;
    Ok(results)
}

pub fn cmd_grad_check(run: &Run) -> Result<SuiteReport> {
    run.record("grad-check")?;
    let report = grad_suite(run.cfg.seed)?;
    write_json(&run.report_path("grad_check.json"), &report)?;
    Ok(report)
}

pub fn render_grad_check(r: &SuiteReport) -> String {
    let mut out = String::new();
    for c in &r.checks {
        out.push_str(&format!(
            "{:<16} {:>5} coords  max rel err {:.2e}  {}\n",
            c.name,
            c.report.checked,
            c.report.max_rel_err,
            if c.report.passed { "ok" } else { "FAIL" }
        ));
    }
    out.push_str(&format!("max_rel_err {:.2e}\n", r.max_rel_err));
    out
}
