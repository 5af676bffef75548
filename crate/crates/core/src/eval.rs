//! Exact dense top-K search, graded IR metrics, query-set statistics, and
//! TREC-format run/qrels files.

use crate::embed::{similarity, Metric};
use crate::lexical::{tokenize, Bm25Index, TfVector};
use crate::vecstore::EmbeddingMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus matrix is empty")]
    EmptyMatrix,
    #[error("no run query appears in the qrels")]
    NoJudgedQueries,
    #[error("{path} line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("query_set_stats requires at least one query")]
    NoQueries,
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Lexical(#[from] crate::lexical::LexicalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One retrieval result row.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: u32,
}

/// A scored ranking for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn from_scored(query_id: String, mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|(ida, sa), (idb, sb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ida.cmp(idb))
        });
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankedEntry {
                doc_id,
                score,
                rank: i as u32 + 1,
            })
            .collect();
        Self { query_id, entries }
    }
}

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn doc_grades(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }
}

/// nDCG gain function; linear (gain = grade) is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NdcgGain {
    Linear,
    Exp,
}

impl Default for NdcgGain {
    fn default() -> Self {
        NdcgGain::Linear
    }
}

/// Latency summary for one pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub llm_calls: u64,
}

/// Nearest-rank percentiles plus the mean over a set of stage timings.
pub fn latency_stats(samples_ms: &[f64], llm_calls: u64) -> LatencyStats {
    if samples_ms.is_empty() {
        return LatencyStats {
            llm_calls,
            ..Default::default()
        };
    }
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pick = |p: f64| {
        let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
        sorted[idx]
    };
    LatencyStats {
        p50_ms: pick(0.50),
        p95_ms: pick(0.95),
        mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
        llm_calls,
    }
}

/// Per-query and mean metric values, plus optional stage latencies.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean: BTreeMap<String, f64>,
    pub evaluated: usize,
    pub skipped_unjudged: Vec<String>,
    pub zero_relevant: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub latency: BTreeMap<String, LatencyStats>,
}

/// Exact top-K scan of the corpus matrix; ties by ascending doc id. K above
/// the corpus size returns the full ranking.
pub fn dense_search(
    query_id: &str,
    q_emb: &[f32],
    matrix: &EmbeddingMatrix,
    k: usize,
    metric: Metric,
) -> Result<RankedList, EvalError> {
    if matrix.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let mut scored = Vec::with_capacity(matrix.len());
    for i in 0..matrix.len() {
        let s = similarity(q_emb, matrix.row_at(i), metric)?;
        scored.push((matrix.ids()[i].clone(), s));
    }
    let mut list = RankedList::from_scored(query_id.to_string(), scored);
    list.entries.truncate(k);
    Ok(list)
}

fn gain(grade: u32, kind: NdcgGain) -> f64 {
    match kind {
        NdcgGain::Linear => grade as f64,
        NdcgGain::Exp => (2.0f64).powi(grade as i32) - 1.0,
    }
}

fn ndcg_at_k(run: &RankedList, grades: &BTreeMap<String, u32>, k: usize, kind: NdcgGain) -> f64 {
    let dcg: f64 = run
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| {
            let g = grades.get(&e.doc_id).copied().unwrap_or(0);
            gain(g, kind) / ((i as f64 + 2.0).log2())
        })
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g, kind) / ((i as f64 + 2.0).log2()))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn map_at_k(run: &RankedList, grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let total_relevant = grades.values().filter(|&&g| g >= 1).count();
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum_prec = 0.0;
    for (i, e) in run.entries.iter().take(k).enumerate() {
        if grades.get(&e.doc_id).copied().unwrap_or(0) >= 1 {
            hits += 1;
            sum_prec += hits as f64 / (i as f64 + 1.0);
        }
    }
    sum_prec / total_relevant as f64
}

fn recall_at_k(run: &RankedList, grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let total_relevant = grades.values().filter(|&&g| g >= 1).count();
    if total_relevant == 0 {
        return 0.0;
    }
    let hits = run
        .entries
        .iter()
        .take(k)
        .filter(|e| grades.get(&e.doc_id).copied().unwrap_or(0) >= 1)
        .count();
    hits as f64 / total_relevant as f64
}

/// nDCG/MAP/Recall at each cutoff, averaged over judged queries. Queries
/// absent from the qrels are skipped with a warning; judged queries with no
/// relevant documents score 0 and stay in the average.
pub fn compute_metrics(
    runs: &[RankedList],
    qrels: &Qrels,
    ks: &[usize],
    kind: NdcgGain,
) -> Result<MetricsReport, EvalError> {
    let mut report = MetricsReport::default();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for run in runs {
        let Some(grades) = qrels.doc_grades(&run.query_id) else {
            log::warn!("query {} has no qrels entry; skipped", run.query_id);
            report.skipped_unjudged.push(run.query_id.clone());
            continue;
        };
        if !grades.values().any(|&g| g >= 1) {
            report.zero_relevant.push(run.query_id.clone());
        }
        let mut per = BTreeMap::new();
        for &k in ks {
            per.insert(format!("ndcg@{k}"), ndcg_at_k(run, grades, k, kind));
            per.insert(format!("map@{k}"), map_at_k(run, grades, k));
            per.insert(format!("recall@{k}"), recall_at_k(run, grades, k));
        }
        for (name, value) in &per {
            *sums.entry(name.clone()).or_insert(0.0) += value;
        }
        report.per_query.insert(run.query_id.clone(), per);
        report.evaluated += 1;
    }
    if report.evaluated == 0 {
        return Err(EvalError::NoJudgedQueries);
    }
    report.mean = sums
        .into_iter()
        .map(|(name, total)| (name, total / report.evaluated as f64))
        .collect();
    Ok(report)
}

/// Query-set statistics: redundancy is the mean pairwise cosine of the
/// queries' term-frequency vectors (`None` for a single query); lexical
/// overlap is the mean BM25 score of each query against the source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub redundancy: Option<f64>,
    pub lexical_overlap: f64,
}

pub fn query_set_stats(
    queries: &[String],
    source_doc: usize,
    index: &Bm25Index,
) -> Result<QueryStats, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let tf: Vec<TfVector> = queries.iter().map(|q| TfVector::from_text(q)).collect();
    let redundancy = if queries.len() < 2 {
        None
    } else {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..tf.len() {
            for j in (i + 1)..tf.len() {
                total += tf[i].cosine(&tf[j]);
                pairs += 1;
            }
        }
        Some(total / pairs as f64)
    };
    let mut overlap = 0.0;
    for q in queries {
        overlap += index.score(&tokenize(q), source_doc)?;
    }
    Ok(QueryStats {
        redundancy,
        lexical_overlap: overlap / queries.len() as f64,
    })
}

/// Write a TREC run file: `qid Q0 docid rank score tag`, scores with six
/// decimal places.
pub fn write_run(path: &Path, runs: &[RankedList], tag: &str) -> Result<(), EvalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for run in runs {
        for e in &run.entries {
            writeln!(w, "{} Q0 {} {} {:.6} {}", run.query_id, e.doc_id, e.rank, e.score, tag)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a TREC run file back into ranked lists (and the tag).
pub fn read_run(path: &Path) -> Result<(Vec<RankedList>, String), EvalError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut by_query: Vec<(String, Vec<RankedEntry>)> = Vec::new();
    let mut tag = String::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(EvalError::Format {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_err = |msg: String| EvalError::Format {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let rank: u32 = fields[3]
            .parse()
            .map_err(|e| parse_err(format!("bad rank: {e}")))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|e| parse_err(format!("bad score: {e}")))?;
        tag = fields[5].to_string();
        let entry = RankedEntry {
            doc_id: fields[2].to_string(),
            score,
            rank,
        };
        match by_query.last_mut() {
            Some((qid, entries)) if qid == fields[0] => entries.push(entry),
            _ => by_query.push((fields[0].to_string(), vec![entry])),
        }
    }
    Ok((
        by_query
            .into_iter()
            .map(|(query_id, entries)| RankedList { query_id, entries })
            .collect(),
        tag,
    ))
}

/// Write TREC qrels: `qid 0 docid grade`.
pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<(), EvalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (qid, grades) in &qrels.judgments {
        for (doc_id, grade) in grades {
            writeln!(w, "{qid} 0 {doc_id} {grade}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut qrels = Qrels::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(EvalError::Format {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let grade: u32 = fields[3].parse().map_err(|e| EvalError::Format {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("bad grade: {e}"),
        })?;
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}
