use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use rnr_cli::commands::{self, render_grad_check, render_study};
use rnr_cli::config::RunConfig;
use rnr_cli::run::{default_source, Run};
use rnr_core::analysis::{render_overlap, render_ppl, render_word_stats};
use rnr_core::retnref::Variant;

#[derive(Parser)]
#[command(name = "rnr", version, about = "Retrieve-and-refine dialogue models")]
struct Cli {
    /// TOML run config; missing keys take their defaults.
    #[arg(long, global = true, env = "RNR_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for checkpoints, retrievals and reports.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and train the retriever.
    TrainRetriever,
    /// Embed every training utterance as a retrieval candidate.
    BuildIndex,
    /// Store one retrieval per example for each split.
    Precompute {
        #[arg(long, default_value = "memnet")]
        source: String,
        /// Allow label-reading sources on valid and test.
        #[arg(long)]
        ablation: bool,
    },
    /// Train a generator on inputs augmented by one source.
    TrainGenerator {
        #[arg(long, default_value = "retnref")]
        variant: Variant,
        /// Defaults to memnet for retrieval variants and none for s2s.
        #[arg(long)]
        source: Option<String>,
    },
    /// Test perplexity per retrieval source.
    EvalPpl {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, value_delimiter = ',')]
        sources: Option<Vec<String>>,
    },
    /// Word and rare-word statistics of test replies.
    EvalStats {
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Overlap of test replies with their retrievals.
    EvalOverlap {
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Chat with a variant in the terminal.
    Chat {
        #[arg(long, default_value = "retnref++")]
        variant: Variant,
    },
    /// Run the chat and A/B study HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        state_dir: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Win rates and p-values from a study log.
    AbResults { log: PathBuf },
    /// Finite-difference check of every differentiable op and both losses.
    GradCheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RNR_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Command::Serve {
        port,
        state_dir,
        static_dir,
    } = &cli.command
    {
        if let Some(p) = port {
            cfg.service.port = *p;
        }
        if state_dir.is_some() {
            cfg.service.state_dir = state_dir.clone();
        }
        if static_dir.is_some() {
            cfg.service.static_dir = static_dir.clone();
        }
    }
    let cfg = cfg.resolve(cli.seed)?;
    let run = Run::new(cfg, &cli.out);
    let mut out = io::stdout().lock();
    match cli.command {
        Command::TrainRetriever => {
            let r = commands::cmd_train_retriever(&run)?;
            writeln!(out, "final loss {:.4}", r.epoch_loss.last().copied().unwrap_or(f64::NAN))?;
        }
        Command::BuildIndex => {
            let n = commands::cmd_build_index(&run)?;
            writeln!(out, "{n} candidates")?;
        }
        Command::Precompute { source, ablation } => commands::cmd_precompute(&run, &source, ablation)?,
        Command::TrainGenerator { variant, source } => {
            let source = source.unwrap_or_else(|| default_source(variant).to_string());
            let r = commands::cmd_train_generator(&run, variant, &source)?;
            if let Some(p) = r.train.valid_ppl.get(r.train.best_epoch) {
                writeln!(out, "best valid ppl {p:.2} at epoch {}", r.train.best_epoch + 1)?;
            }
        }
        Command::EvalPpl { variant, sources } => {
            let variant = match variant {
                Some(v) => v,
                None => run.cfg.eval.ppl_variant.parse()?,
            };
            let sources = sources.unwrap_or_else(|| run.cfg.eval.sources.clone());
            let r = commands::cmd_eval_ppl(&run, variant, &sources)?;
            write!(out, "{}", render_ppl(&r.rows))?;
        }
        Command::EvalStats { variants } => {
            let variants = variants.unwrap_or_else(|| run.cfg.eval.variants.clone());
            let r = commands::cmd_eval_stats(&run, &variants)?;
            write!(out, "{}", render_word_stats(&r.rows))?;
        }
        Command::EvalOverlap { variants } => {
            let variants = variants.unwrap_or_else(|| run.cfg.eval.variants.clone());
            let r = commands::cmd_eval_overlap(&run, &variants)?;
            let table: Vec<_> = r.rows.iter().map(|r| (r.method.clone(), r.bins.clone())).collect();
            write!(out, "{}", render_overlap(&table))?;
        }
        Command::Chat { variant } => {
            drop(out);
            commands::cmd_chat(&run, variant, io::stdin().lock(), io::stdout())?;
        }
        Command::Serve { .. } => commands::cmd_serve(&run)?,
        Command::AbResults { log } => {
            let r = commands::cmd_ab_results(&run, &log)?;
            write!(out, "{}", render_study(&r))?;
        }
        Command::GradCheck => {
            let r = commands::cmd_grad_check(&run)?;
            write!(out, "{}", render_grad_check(&r))?;
            if !r.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
