//! `vagent` subcommands. Exit codes: 0 success, 1 runtime error, 2 usage.

use crate::app::{open_corpus, build_models, App};
use crate::config::AppConfig;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use vagent_core::eval::{
    open_cell, read_queries, run_ablation, run_eval, AblationGrid, EvalConfig, Gain, Qrels,
};
use vagent_core::fusion::{fused_search, FusionConfig, FusionError, ScoredVideo};
use vagent_core::ingest::read_manifest;
use vagent_core::merge::merge_files;
use vagent_core::rerank::rerank_results;
use vagent_core::store::Corpus;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vagent", version, about = "Multimodal video search and agent engine")]
pub struct Cli {
    /// TOML configuration file; VAGENT_* environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory (overrides `data_dir`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a JSONL manifest into the data directory.
    Index {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fused search; prints a TSV of the results.
    Search {
        query: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Per-modality candidate depth.
        #[arg(long)]
        candidates: Option<usize>,
        /// Re-rank with the configured reranker model.
        #[arg(long)]
        rerank: bool,
    },
    /// nDCG and recall over a query set and TREC qrels.
    Eval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        rerank: bool,
        #[arg(long, default_value = "exp")]
        gain: Gain,
        #[arg(long, default_value_t = 10)]
        metric_k: usize,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Label for the retrieval vector in the report.
        #[arg(long, default_value = "reference")]
        label: String,
        /// Also write the full run as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Evaluate a grid of prebuilt indexes, with and without re-ranking.
    Ablate {
        /// TOML grid: `[[cells]]` frames, retrieval_vector, description,
        /// data_dir; optional `rerank` list and `[eval]` table.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// out = base + (plus - minus) over tensor archives.
    Merge {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        plus: PathBuf,
        #[arg(long)]
        minus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report task-vector norms without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the HTTP gateway.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

/// Parses `args` (program name first) and runs the command, writing to the
/// given streams. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = AppConfig::load(cli.config.as_deref())?;
    if let Some(d) = &cli.data {
        cfg.data_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Opens an existing corpus; a missing or empty one is an error.
fn existing_corpus(cfg: &AppConfig) -> Result<Corpus> {
    if !Corpus::exists(&cfg.data_dir) {
        bail!("empty corpus: no index in {}", cfg.data_dir.display());
    }
    let corpus = open_corpus(cfg)?;
    if corpus.is_empty() {
        bail!("empty corpus: {} holds no videos", cfg.data_dir.display());
    }
    Ok(corpus)
}

pub fn results_tsv(results: &[ScoredVideo]) -> String {
    let mut s = String::from("rank\tvideo_id\tfused_score\tvision_score\taudio_score\n");
    for v in results {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            v.rank, v.video_id, v.fused_score, v.vision_score, v.audio_score
        );
    }
    s
}

fn execute(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Index { manifest } => {
            let transcriber = cfg.build_transcriber();
            let records = read_manifest(&manifest, transcriber.as_deref())
                .with_context(|| format!("reading {}", manifest.display()))?;
            let mut corpus = open_corpus(&cfg)?;
            let report = corpus.ingest_all(records)?;
            for (id, why) in &report.skipped {
                writeln!(err, "skipped {id}: {why}")?;
            }
            writeln!(
                out,
                "indexed {} videos, skipped {}, corpus now holds {}",
                report.indexed.len(),
                report.skipped.len(),
                corpus.len()
            )?;
        }
        Command::Search {
            query,
            k,
            alpha,
            candidates,
            rerank,
        } => {
            let k = k.unwrap_or(cfg.fusion.k);
            let fusion = FusionConfig {
                alpha: alpha.unwrap_or(cfg.fusion.alpha),
                candidates: candidates.unwrap_or(cfg.fusion.candidates).max(k),
                k,
            };
            fusion.validate()?;
            let corpus = existing_corpus(&cfg)?;
            let mut results = match fused_search(&corpus, &query, &fusion) {
                Err(FusionError::EmptyCorpus) => bail!("empty corpus"),
                r => r?,
            };
            if rerank {
                let models = build_models(&cfg)?;
                let degraded = rerank_results(
                    &corpus,
                    &query,
                    &mut results,
                    models.reranker.as_ref(),
                    cfg.llm.reranker.max_tokens,
                )?;
                if degraded {
                    writeln!(err, "warning: reranker unavailable, showing fused order")?;
                }
            }
            out.write_all(results_tsv(&results).as_bytes())?;
        }
        Command::Eval {
            queries,
            qrels,
            rerank,
            gain,
            metric_k,
            threads,
            label,
            json,
        } => {
            let corpus = existing_corpus(&cfg)?;
            let queries = read_queries(&queries)?;
            let qrels = Qrels::read(&qrels)?;
            let eval = EvalConfig {
                fusion: cfg.fusion,
                metric_k,
                gain,
                rerank,
                max_tokens: cfg.llm.reranker.max_tokens,
                threads,
            };
            let models = build_models(&cfg)?;
            let reranker = rerank.then(|| models.reranker.as_ref());
            let run = run_eval(&corpus, &queries, &qrels, &eval, reranker, &label)?;
            for s in &run.skipped {
                writeln!(err, "skipped {}: {}", s.query_id, s.reason)?;
            }
            if let Some(path) = json {
                std::fs::write(&path, run.to_json()).with_context(|| format!("writing {}", path.display()))?;
            }
            out.write_all(run.to_tsv().as_bytes())?;
        }
        Command::Ablate {
            grid,
            queries,
            qrels,
            json,
        } => {
            let grid_spec = read_grid(&grid)?;
            let queries = read_queries(&queries)?;
            let qrels = Qrels::read(&qrels)?;
            let models = build_models(&cfg)?;
            let embedder = cfg.embedder.build()?;
            let mut open = |cell: &vagent_core::eval::AblationCell| open_cell(cell, embedder.clone());
            let report = run_ablation(&grid_spec, &queries, &qrels, &mut open, Some(models.reranker.as_ref()))?;
            if let Some(path) = json {
                std::fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
            }
            out.write_all(report.to_tsv(grid_spec.eval.metric_k).as_bytes())?;
        }
        Command::Merge {
            base,
            plus,
            minus,
            out: target,
            dry_run,
        } => {
            if target.is_none() && !dry_run {
                bail!("--out is required unless --dry-run is given");
            }
            let report = merge_files(&base, &plus, &minus, target.as_deref(), dry_run)?;
            writeln!(out, "tensor\ttask_vector_norm")?;
            for (name, norm) in &report.task_vector_norms {
                writeln!(out, "{name}\t{norm}")?;
            }
            match (&target, report.written) {
                (Some(p), true) => writeln!(err, "wrote {}", p.display())?,
                _ => writeln!(err, "dry run: nothing written")?,
            }
        }
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| cfg.bind.clone());
            let app = Arc::new(App::open(cfg)?);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!(addr = %listener.local_addr()?, videos = app.video_count(), "serving");
                crate::server::serve(listener, app, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
                .map_err(|e| anyhow!(e))
            })?;
        }
    }
    Ok(())
}

/// Reads an ablation grid; relative cell directories resolve against the
/// grid file's directory.
fn read_grid(path: &Path) -> Result<AblationGrid> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut grid: AblationGrid = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for cell in &mut grid.cells {
        if cell.data_dir.is_relative() {
            cell.data_dir = base.join(&cell.data_dir);
        }
    }
    Ok(grid)
}
