use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use csrm::pipeline::{self, Context, PipelineConfig};
use csrm::retrieval::RetrieverTag;
use csrm_server::{AppState, Reloader, RoutePaths, RunningServer};
use serde::Serialize;

/// Cold-start relevance pipeline on a synthetic bilingual catalog.
#[derive(Parser, Debug)]
#[command(name = "csrm", version)]
struct Cli {
    /// Pipeline config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to `<runs_dir>/<name>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only warnings and errors on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Retriever {
    Bm25,
    Ebr,
    #[value(name = "ebr_local")]
    EbrLocal,
}

impl From<Retriever> for RetrieverTag {
    fn from(r: Retriever) -> Self {
        match r {
            Retriever::Bm25 => RetrieverTag::Bm25,
            Retriever::Ebr => RetrieverTag::Ebr,
            Retriever::EbrLocal => RetrieverTag::EbrLocal,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic world and the query splits.
    Gen,
    /// Build the BM25 index.
    Index,
    /// Train the embedding retriever on teacher CVR.
    TrainEbr {
        /// Add target-market impressions.
        #[arg(long)]
        local: bool,
    },
    /// Write retrieval-augmentation features for every query.
    Rqa {
        #[arg(long, value_enum)]
        retriever: Retriever,
    },
    /// Label the training pairs with the configured teacher.
    Label,
    /// Train one relevance model per the stage toggles.
    Train,
    /// Multi-round self-distillation.
    SelfDistill,
    /// Distill the exact-match and defect students.
    DistillOnline,
    /// Recompute a checkpoint's metrics and print them as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Serve the online students over HTTP.
    Serve,
    /// Run every stage in memory and write `report.json`.
    Ablation,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: String,
}

fn print_json<T: Serialize>(value: &T) -> csrm::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(cli: &Cli) -> csrm::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn serve(ctx: Context) -> csrm::Result<()> {
    let state = Arc::new(pipeline::serving_state(&ctx)?);
    let s = &ctx.config.serving;
    let paths = RoutePaths {
        score: s.score_path.clone(),
        refresh: s.refresh_path.clone(),
        health: s.health_path.clone(),
    };
    let addr = s.addr.clone();
    let ctx = Arc::new(ctx);
    let reload: Reloader = Arc::new(move || {
        let (students, corpus) = pipeline::load_students(&ctx)?;
        Ok((corpus.products, Some(students)))
    });
    let app = AppState {
        serving: state,
        reload: Some(reload),
    };
    let server = RunningServer::start(&addr, app, paths).map_err(|e| csrm::Error::Io {
        path: PathBuf::from(&addr),
        source: e,
    })?;
    eprintln!("serving on http://{}", server.addr);
    server.join().map_err(|e| csrm::Error::Io {
        path: PathBuf::from(&addr),
        source: e,
    })
}

fn run(cli: Cli) -> csrm::Result<()> {
    let ctx = Context::new(load_config(&cli)?, cli.out.clone())?;
    match cli.command {
        Command::Gen => print_json(&pipeline::gen(&ctx)?),
        Command::Index => print_json(&pipeline::index(&ctx)?),
        Command::TrainEbr { local } => print_json(&pipeline::train_ebr_stage(&ctx, local)?),
        Command::Rqa { retriever } => {
            let (manifest, accuracy) = pipeline::rqa_stage(&ctx, retriever.into())?;
            log::info!("rqa accuracy on held-out target-market queries: {accuracy:.4}");
            print_json(&manifest)
        }
        Command::Label => print_json(&pipeline::label_stage(&ctx)?),
        Command::Train => print_json(&pipeline::train_stage(&ctx)?),
        Command::SelfDistill => print_json(&pipeline::self_distill_stage(&ctx)?),
        Command::DistillOnline => {
            let (manifest, summary) = pipeline::distill_online_stage(&ctx)?;
            log::info!(
                "online: em@1 {:.4} -> {:.4}, defect@5 {:.4} -> {:.4}",
                summary.ranking.baseline_em_at_1,
                summary.ranking.online_em_at_1,
                summary.ranking.baseline_defect_at_5,
                summary.ranking.online_defect_at_5
            );
            print_json(&manifest)
        }
        Command::Eval { checkpoint } => print_json(&pipeline::eval_stage(&ctx, &checkpoint)?),
        Command::Serve => serve(ctx),
        Command::Ablation => {
            let report = pipeline::ablation_stage(&ctx)?;
            for row in &report.rows {
                log::info!(
                    "{:<12} stage {} dev F1 {:.4} test F1 {:.4} gap {:.4}",
                    row.name,
                    row.stage,
                    row.scores.l2_dev_f1,
                    row.scores.l2_test_f1,
                    row.transfer_gap
                );
            }
            print_json(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                kind: e.kind(),
                message: e.to_string(),
            };
            eprintln!(
                "{}",
                serde_json::to_string(&serde_json::json!({ "error": report }))
                    .expect("serializable")
            );
            match e {
                csrm::Error::Validation(_)
                | csrm::Error::MissingArtifact { .. }
                | csrm::Error::Capability(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
