//! `cindex` — concept-index pipeline driver.
//!
//! Exit codes: 0 success, 1 runtime failure (structured JSON error on
//! stderr), 2 usage or configuration error.

use clap::{Parser, Subcommand, ValueEnum};
use cindex::config::PipelineConfig;
use cindex::expand::RescoreVariant;
use cindex::parallel::{configure_threads, ExecMode};
use cindex::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cindex", version, about = "Concept indexing and concept-guided retrieval augmentation")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Override every stochastic seed (mock embeddings, extractor training,
    /// condition sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the worker pool; single-threaded when 1.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print the fully-resolved effective config as JSON and exit.
    #[arg(long, global = true)]
    emit_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Concept index construction.
    Index {
        #[command(subcommand)]
        cmd: IndexCmd,
    },
    /// Concept extractor training.
    Extractor {
        #[command(subcommand)]
        cmd: ExtractorCmd,
    },
    /// Synthetic query-set generation.
    Qgen {
        #[command(subcommand)]
        cmd: QgenCmd,
    },
    /// Offline snippet expansion.
    Expand {
        #[command(subcommand)]
        cmd: ExpandCmd,
    },
    /// Base dense search over the evaluation queries.
    Search,
    /// Rescore the base run.
    Rescore {
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Evaluate a run file against the qrels.
    Eval {
        /// Run file to evaluate (defaults to the base run).
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Query-set statistics (redundancy, lexical overlap).
    Stats,
    /// Per-stage latency accounting over the evaluation queries.
    Bench {
        #[arg(long, value_enum, default_value_t = Variant::Max)]
        variant: Variant,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Build core topics and phrases for every document.
    Build {
        /// Also write the full per-(document, phrase) distinctiveness table.
        #[arg(long)]
        dump_distinctiveness: bool,
    },
    /// Fill enriched distributions from the trained extractor.
    Enrich,
}

#[derive(Subcommand)]
enum ExtractorCmd {
    /// Train the two-head concept extractor.
    Train,
}

#[derive(Subcommand)]
enum QgenCmd {
    /// Generate the coverage-controlled query set.
    Generate,
    /// Round-trip filter the generated queries.
    Filter,
    /// Export contrastive training pairs for kept queries.
    ExportPairs,
}

#[derive(Subcommand)]
enum ExpandCmd {
    /// Generate and index concept-focused snippets.
    Snippets,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Max,
    Average,
    Concept,
    Hyde,
}

impl From<Variant> for RescoreVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Max => RescoreVariant::SnippetMax,
            Variant::Average => RescoreVariant::SnippetAverage,
            Variant::Concept => RescoreVariant::ConceptMatch,
            Variant::Hyde => RescoreVariant::Hyde,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut cfg = match PipelineConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.params.seed = seed;
        cfg.extractor.seed = seed;
        cfg.embed.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
        return ExitCode::from(2);
    }
    configure_threads(cli.jobs);
    let mode = if cli.jobs == Some(1) {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };

    if cli.emit_config {
        println!("{}", cfg.effective_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("{}", serde_json::json!({ "error": "no command given (see --help)" }));
        return ExitCode::from(2);
    };

    let result = match command {
        Command::Index { cmd: IndexCmd::Build { dump_distinctiveness } } => {
            pipeline::cmd_index_build_with_dumps(&cfg, mode, dump_distinctiveness)
        }
        Command::Index { cmd: IndexCmd::Enrich } => pipeline::cmd_index_enrich(&cfg, mode),
        Command::Extractor { cmd: ExtractorCmd::Train } => pipeline::cmd_extractor_train(&cfg),
        Command::Qgen { cmd: QgenCmd::Generate } => pipeline::cmd_qgen_generate(&cfg, mode),
        Command::Qgen { cmd: QgenCmd::Filter } => pipeline::cmd_qgen_filter(&cfg, mode),
        Command::Qgen { cmd: QgenCmd::ExportPairs } => pipeline::cmd_qgen_export_pairs(&cfg),
        Command::Expand { cmd: ExpandCmd::Snippets } => pipeline::cmd_expand_snippets(&cfg, mode),
        Command::Search => pipeline::cmd_search(&cfg, mode),
        Command::Rescore { variant } => pipeline::cmd_rescore(&cfg, variant.into(), mode),
        Command::Eval { run } => pipeline::cmd_eval(&cfg, run.as_deref()),
        Command::Stats => pipeline::cmd_stats(&cfg),
        Command::Bench { variant } => pipeline::cmd_bench(&cfg, variant.into(), mode).map(|report| {
            for (stage, stats) in &report.stages {
                println!(
                    "{stage}: p50 {:.3} ms, p95 {:.3} ms, mean {:.3} ms, llm_calls {}",
                    stats.p50_ms, stats.p95_ms, stats.mean_ms, stats.llm_calls
                );
            }
        }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
