//! Retrieval evaluation: qrels and query files, nDCG@k / Recall@k, single
//! runs over a corpus and ablation grids over several corpora.

mod metrics;

pub use metrics::{ndcg_at_k, recall_at_k, Gain, Grades};

use crate::embed::Embedder;
use crate::fusion::{fused_search, FusionConfig, FusionError};
use crate::index::IndexParams;
use crate::ingest::{IdentityTranslator, IngestConfig};
use crate::llm::LlmClient;
use crate::rerank::{rerank_results, RerankError};
use crate::store::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Recorded in every report: the grade-to-gain mapping is a choice, not
/// something the benchmark fixes.
pub const GAIN_NOTE: &str = "gain convention is configurable (exp = 2^r-1, linear = r); official benchmark convention unconfirmed";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("query has no relevant documents")]
    NoRelevant,
    #[error("qrels line {line}: {message}")]
    InvalidQrels { line: usize, message: String },
    #[error("queries line {line}: {message}")]
    InvalidQueries { line: usize, message: String },
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Query id to graded judgments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels(pub BTreeMap<String, Grades>);

impl Qrels {
    /// TREC format, one `query_id 0 video_id grade` per line. Blank lines
    /// and `#` comments are ignored; a repeated pair keeps the last grade.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut map: BTreeMap<String, Grades> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| EvalError::InvalidQrels {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, _iter, vid, grade] = fields[..] else {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            };
            let grade: u32 = grade
                .parse()
                .map_err(|_| bad(format!("grade {grade:?} is not a non-negative integer")))?;
            map.entry(qid.to_string())
                .or_default()
                .insert(vid.to_string(), grade);
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, qid: &str) -> Option<&Grades> {
        self.0.get(qid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// `query_id<TAB>query_text` per line.
pub fn parse_queries(text: &str) -> Result<Vec<Query>, EvalError> {
    let mut out: Vec<Query> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::InvalidQueries {
            line: i + 1,
            message,
        };
        let (id, q) = line
            .split_once('\t')
            .ok_or_else(|| bad("missing tab separator".into()))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(bad("empty query id".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(bad(format!("duplicate query id {id}")));
        }
        out.push(Query {
            id: id.to_string(),
            text: q.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>, EvalError> {
    parse_queries(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub fusion: FusionConfig,
    /// Metric cutoff.
    pub metric_k: usize,
    pub gain: Gain,
    pub rerank: bool,
    pub max_tokens: u32,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            metric_k: 10,
            gain: Gain::Exp,
            rerank: false,
            max_tokens: 512,
            threads: 0,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub alpha: f64,
    pub candidates: usize,
    pub k: usize,
    pub metric_k: usize,
    pub gain: Gain,
    pub gain_note: String,
    pub frames: usize,
    pub description: bool,
    pub rerank: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranker_model: Option<String>,
    pub retrieval_vector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_dir: Option<PathBuf>,
    pub index: IndexParams,
    pub embedding_dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub ndcg: f64,
    pub recall: f64,
    pub ranking: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rerank_degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub config: ConfigSnapshot,
    /// Evaluated queries, sorted by id.
    pub queries: Vec<QueryResult>,
    /// Mean over evaluated queries.
    pub ndcg: f64,
    pub recall: f64,
    pub evaluated: usize,
    pub skipped: Vec<SkippedQuery>,
    /// Query ids in the qrels with no query text.
    pub missing_queries: Vec<String>,
    /// `(query id, video id)` judgments naming videos absent from the corpus.
    pub unknown_videos: Vec<(String, String)>,
    pub wall_clock_ms: u64,
}

pub const TSV_HEADER: &str = "frames\tretrieval_vector\tdescription\trerank\tndcg@10\tr@10";

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl EvalRun {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run serializes")
    }

    pub fn row(&self) -> AblationRow {
        AblationRow {
            frames: self.config.frames,
            retrieval_vector: self.config.retrieval_vector.clone(),
            description: self.config.description,
            rerank: self.config.rerank,
            ndcg: Some(self.ndcg),
            recall: Some(self.recall),
            note: None,
        }
    }

    /// Header plus one row.
    pub fn to_tsv(&self) -> String {
        rows_to_tsv(&[self.row()], self.config.metric_k)
    }
}

struct Job<'a> {
    query: &'a Query,
    grades: &'a Grades,
}

fn evaluate_one(
    corpus: &Corpus,
    job: &Job<'_>,
    cfg: &EvalConfig,
    reranker: Option<&dyn LlmClient>,
) -> Result<QueryResult, EvalError> {
    let fused = match fused_search(corpus, &job.query.text, &cfg.fusion) {
        Ok(list) => list,
        Err(FusionError::EmptyCorpus) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut fused = fused;
    let mut degraded = false;
    if let (true, Some(llm)) = (cfg.rerank, reranker) {
        degraded = rerank_results(corpus, &job.query.text, &mut fused, llm, cfg.max_tokens)?;
    }
    let ranking: Vec<String> = fused.into_iter().map(|v| v.video_id).collect();
    Ok(QueryResult {
        query_id: job.query.id.clone(),
        ndcg: ndcg_at_k(&ranking, job.grades, cfg.metric_k, cfg.gain),
        recall: recall_at_k(&ranking, job.grades, cfg.metric_k)?,
        ranking,
        rerank_degraded: degraded,
    })
}

/// Runs every judged query through fused retrieval (and the re-ranker when
/// `cfg.rerank`), then averages both metrics over queries with at least one
/// relevant document. Unjudged queries, judgments without queries and
/// judged videos absent from the corpus are reported, not fatal.
pub fn run_eval(
    corpus: &Corpus,
    queries: &[Query],
    qrels: &Qrels,
    cfg: &EvalConfig,
    reranker: Option<&dyn LlmClient>,
    retrieval_vector: &str,
) -> Result<EvalRun, EvalError> {
    cfg.fusion.validate()?;
    if cfg.metric_k == 0 {
        return Err(EvalError::InvalidConfig("metric_k must be >= 1".into()));
    }
    if cfg.rerank && reranker.is_none() {
        return Err(EvalError::InvalidConfig("rerank requested without a reranker".into()));
    }
    let started = Instant::now();

    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for q in queries {
        match qrels.get(&q.id) {
            None => skipped.push(SkippedQuery {
                query_id: q.id.clone(),
                reason: "no judgments".into(),
            }),
            Some(g) if !g.values().any(|&v| v > 0) => skipped.push(SkippedQuery {
                query_id: q.id.clone(),
                reason: "no relevant documents".into(),
            }),
            Some(g) => jobs.push(Job {
                query: q,
                grades: g,
            }),
        }
    }
    let asked: std::collections::HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    let missing_queries: Vec<String> = qrels
        .0
        .keys()
        .filter(|id| !asked.contains(id.as_str()))
        .cloned()
        .collect();
    let unknown_videos: Vec<(String, String)> = qrels
        .0
        .iter()
        .filter(|(qid, _)| asked.contains(qid.as_str()))
        .flat_map(|(qid, g)| g.keys().map(move |vid| (qid, vid)))
        .filter(|(_, vid)| corpus.document(vid).is_none())
        .map(|(q, v)| (q.clone(), v.clone()))
        .collect();

    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len())
    .max(1);
    let chunk = jobs.len().div_ceil(threads).max(1);
    let mut results: Vec<QueryResult> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|j| evaluate_one(corpus, j, cfg, reranker))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eval worker panicked"))
            .collect::<Result<Vec<Vec<_>>, _>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    // aggregate in a fixed order so the means do not depend on scheduling
    results.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let n = results.len();
    let mean = |f: fn(&QueryResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(f).fold(0.0, |a, b| a + b) / n as f64
        }
    };
    let (ndcg, recall) = (mean(|r| r.ndcg), mean(|r| r.recall));
    skipped.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let ingest = corpus.ingest_config();
    Ok(EvalRun {
        config: ConfigSnapshot {
            alpha: cfg.fusion.alpha,
            candidates: cfg.fusion.candidates,
            k: cfg.fusion.k,
            metric_k: cfg.metric_k,
            gain: cfg.gain,
            gain_note: GAIN_NOTE.into(),
            frames: ingest.frames_per_video,
            description: ingest.include_description,
            rerank: cfg.rerank,
            reranker_model: reranker.filter(|_| cfg.rerank).map(|l| l.model().to_string()),
            retrieval_vector: retrieval_vector.to_string(),
            index_dir: corpus.dir().map(Path::to_path_buf),
            index: *corpus.index_params(),
            embedding_dimension: corpus.embedder().dimension(),
        },
        queries: results,
        ndcg,
        recall,
        evaluated: n,
        skipped,
        missing_queries,
        unknown_videos,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    })
}

/// One index-time configuration of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub frames: usize,
    /// Label of the embedder the index was built with.
    pub retrieval_vector: String,
    pub description: bool,
    pub data_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
    /// Query-time re-ranking settings tried for every cell.
    #[serde(default = "default_rerank_axis")]
    pub rerank: Vec<bool>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_rerank_axis() -> Vec<bool> {
    vec![false, true]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub frames: usize,
    pub retrieval_vector: String,
    pub description: bool,
    pub rerank: bool,
    /// `None` when the cell could not be evaluated.
    pub ndcg: Option<f64>,
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AblationRow {
    pub fn available(&self) -> bool {
        self.ndcg.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Full runs for the available rows, in row order.
    pub runs: Vec<EvalRun>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_tsv(&self, metric_k: usize) -> String {
        rows_to_tsv(&self.rows, metric_k)
    }
}

pub fn rows_to_tsv(rows: &[AblationRow], metric_k: usize) -> String {
    let mut out = TSV_HEADER.replace("@10", &format!("@{metric_k}"));
    out.push('\n');
    for r in rows {
        let metric = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.frames,
            r.retrieval_vector,
            on_off(r.description),
            on_off(r.rerank),
            metric(r.ndcg),
            metric(r.recall)
        );
    }
    out
}

/// Opens the prebuilt corpus of `cell`, refusing directories that hold no
/// corpus or one built with different index-time settings.
pub fn open_cell(cell: &AblationCell, embedder: Arc<dyn Embedder>) -> Result<Corpus, String> {
    if !Corpus::exists(&cell.data_dir) {
        return Err(format!("no index in {}", cell.data_dir.display()));
    }
    let ingest = IngestConfig {
        frames_per_video: cell.frames,
        include_description: cell.description,
    };
    let corpus = Corpus::open(
        &cell.data_dir,
        embedder,
        Arc::new(IdentityTranslator),
        IndexParams::default(),
        ingest,
    )
    .map_err(|e| e.to_string())?;
    if *corpus.ingest_config() != ingest {
        return Err(format!(
            "index in {} was built with frames={} description={}",
            cell.data_dir.display(),
            corpus.ingest_config().frames_per_video,
            corpus.ingest_config().include_description
        ));
    }
    Ok(corpus)
}

/// Evaluates every cell with every re-ranking setting. Rows follow cell
/// order, then re-ranking order; a cell whose corpus cannot be opened
/// yields unavailable rows instead of an error.
pub fn run_ablation(
    grid: &AblationGrid,
    queries: &[Query],
    qrels: &Qrels,
    open: &mut dyn FnMut(&AblationCell) -> Result<Corpus, String>,
    reranker: Option<&dyn LlmClient>,
) -> Result<AblationReport, EvalError> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for cell in &grid.cells {
        let unavailable = |rerank: bool, note: String| AblationRow {
            frames: cell.frames,
            retrieval_vector: cell.retrieval_vector.clone(),
            description: cell.description,
            rerank,
            ndcg: None,
            recall: None,
            note: Some(note),
        };
        let corpus = match open(cell) {
            Ok(c) => c,
            Err(note) => {
                tracing::warn!(dir = %cell.data_dir.display(), %note, "ablation cell unavailable");
                rows.extend(grid.rerank.iter().map(|&r| unavailable(r, note.clone())));
                continue;
            }
        };
        for &rr in &grid.rerank {
            if rr && reranker.is_none() {
                rows.push(unavailable(rr, "no reranker configured".into()));
                continue;
            }
            let cfg = EvalConfig {
                rerank: rr,
                ..grid.eval
            };
            let run = run_eval(&corpus, queries, qrels, &cfg, reranker, &cell.retrieval_vector)?;
            let mut row = run.row();
            // the row reports the cell as requested; the corpus was checked to match
            row.frames = cell.frames;
            row.description = cell.description;
            rows.push(row);
            runs.push(run);
        }
    }
    Ok(AblationReport { rows, runs })
}
