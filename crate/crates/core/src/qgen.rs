//! Coverage-controlled query-set generation.
//!
//! For each document the first query is unconditioned; every later query is
//! steered toward the document's under-covered core phrases: the extractor
//! summarizes what the queries so far already express, the gap against the
//! document's enriched phrase distribution becomes a sampling distribution,
//! and the sampled phrases are appended to the prompt as an explicit
//! condition. A round-trip filter then keeps a query only if its source
//! document ranks near the top under a combined text + concept score.

use crate::corpus::{Document, PhraseVocab};
use crate::embed::{similarity, Embedder};
use crate::extractor::ExtractorModel;
use crate::llm::{Gateway, PromptTemplate};
use crate::profile::{sparse_get, sparse_sum, ConceptProfile, ProfileSet, SparseVec};
use crate::vecstore::EmbeddingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QgenError {
    #[error("under-coverage distribution over an empty support")]
    EmptySupport,
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("sample_conditions requires count >= 1")]
    ZeroCount,
    #[error("sampling distribution sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("document \"{0}\" has no enriched phrase distribution; run enrichment first")]
    NotEnriched(String),
    #[error("queries file line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("no profile for document \"{0}\"")]
    MissingProfile(String),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    Extractor(#[from] crate::extractor::ExtractorError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One generated query with provenance and filter outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuery {
    pub doc_id: String,
    /// 1-based position within the document's query set.
    pub seq: u32,
    pub text: String,
    /// Conditioning phrases; empty exactly for the first query.
    pub condition_phrases: Vec<String>,
    pub kept: bool,
    pub filter_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_text: Option<String>,
}

/// Round-trip filter settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    /// A query is kept iff its source document ranks within the top N.
    pub top_n: usize,
    /// Candidate pool per query; also the z-score population.
    pub pool_size: usize,
    /// Fraction of each sparse vector's support used by concept similarity.
    pub top_fraction: f64,
}

/// Knobs for one document's query-set generation.
#[derive(Debug, Clone)]
pub struct QuerySetParams {
    /// Queries per document (M).
    pub queries_per_doc: usize,
    pub k_topics_enriched: usize,
    pub k_phrases_enriched: usize,
    pub epsilon: f64,
    pub seed: u64,
}

/// Under-coverage distribution over the document's enriched-phrase support:
/// `normalize(max(y_doc - y_queries, epsilon))`, zero off-support.
pub fn undercoverage_pi(y_doc: &SparseVec, y_queries: &SparseVec, epsilon: f64) -> Result<SparseVec, QgenError> {
    if epsilon <= 0.0 {
        return Err(QgenError::BadEpsilon(epsilon));
    }
    if y_doc.is_empty() {
        return Err(QgenError::EmptySupport);
    }
    let mut masses: SparseVec = y_doc
        .iter()
        .map(|&(j, v)| (j, (v - sparse_get(y_queries, j)).max(epsilon)))
        .collect();
    let total: f64 = masses.iter().map(|&(_, m)| m).sum();
    for (_, m) in &mut masses {
        *m /= total;
    }
    Ok(masses)
}

/// Weighted sampling without replacement: sequential draws, removing chosen
/// mass. Returns `min(count, support)` distinct ordinals in draw order.
pub fn sample_conditions(pi: &SparseVec, count: usize, seed: u64) -> Result<Vec<usize>, QgenError> {
    if count == 0 {
        return Err(QgenError::ZeroCount);
    }
    let sum = sparse_sum(pi);
    if (sum - 1.0).abs() > 1e-9 {
        return Err(QgenError::NotNormalized(sum));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<(usize, f64)> = pi.clone();
    let mut total = sum;
    let mut picked = Vec::with_capacity(count.min(pi.len()));
    while picked.len() < count && !remaining.is_empty() {
        let r = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = remaining.len() - 1;
        for (pos, &(_, m)) in remaining.iter().enumerate() {
            acc += m;
            if r < acc {
                chosen = pos;
                break;
            }
        }
        let (ordinal, mass) = remaining.remove(chosen);
        picked.push(ordinal);
        total -= mass;
    }
    Ok(picked)
}

/// Generate the query set for one document, appending to `out` as queries
/// complete so partial progress survives a failure.
#[allow(clippy::too_many_arguments)]
pub fn generate_query_set(
    doc: &Document,
    profile: &ConceptProfile,
    template: &PromptTemplate,
    gateway: &Gateway,
    extractor: &ExtractorModel,
    embedder: &Embedder,
    vocab: &PhraseVocab,
    params: &QuerySetParams,
    out: &mut Vec<GeneratedQuery>,
) -> Result<(), QgenError> {
    if profile.enriched_phrases.is_empty() {
        return Err(QgenError::NotEnriched(doc.id.clone()));
    }
    let conditions_per_query = params.k_phrases_enriched / params.queries_per_doc;
    for m in 1..=params.queries_per_doc {
        let condition: Option<Vec<String>> = if m == 1 {
            None
        } else {
            let joined: String = out
                .iter()
                .map(|q| q.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let (_, y_queries) = extractor.extract_from_text(
                embedder,
                &joined,
                params.k_topics_enriched,
                params.k_phrases_enriched,
            )?;
            let pi = undercoverage_pi(&profile.enriched_phrases, &y_queries, params.epsilon)?;
            let seed = crate::derive_seed(params.seed, &format!("{}#{}", doc.id, m));
            let ordinals = sample_conditions(&pi, conditions_per_query, seed)?;
            Some(ordinals.iter().map(|&j| vocab.phrase(j).to_string()).collect())
        };
        let output = gateway.generate_query(template, doc, condition.as_deref())?;
        out.push(GeneratedQuery {
            doc_id: doc.id.clone(),
            seq: m as u32,
            text: output.text,
            condition_phrases: condition.unwrap_or_default(),
            kept: true,
            filter_score: 0.0,
            negative_text: output.negative,
        });
    }
    Ok(())
}

/// Inner-product similarity over each vector's top fraction of its own
/// support (ties toward the lower ordinal). Empty supports score 0.
pub fn concept_similarity(y_query: &SparseVec, y_doc: &SparseVec, top_fraction: f64) -> f64 {
    let a = truncate_top_fraction(y_query, top_fraction);
    let b = truncate_top_fraction(y_doc, top_fraction);
    a.iter().map(|&(j, v)| v * sparse_get(&b, j)).sum()
}

fn truncate_top_fraction(v: &SparseVec, fraction: f64) -> SparseVec {
    if v.is_empty() {
        return Vec::new();
    }
    let keep = ((v.len() as f64 * fraction).ceil() as usize).clamp(1, v.len());
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| {
        v[b].1
            .partial_cmp(&v[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| v[a].0.cmp(&v[b].0))
    });
    let mut kept: SparseVec = order[..keep].iter().map(|&i| v[i]).collect();
    kept.sort_by_key(|&(j, _)| j);
    kept
}

/// z-score normalization over a population; a degenerate population
/// (sigma < 1e-12) contributes all zeros.
pub fn z_normalize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < 1e-12 {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| (v - mean) / sigma).collect()
    }
}

/// Rank a pool under z(text) + z(concept). Returns each pool member's
/// combined score and the 1-based rank of `source` (ties by ascending id).
pub fn combined_rank(pool: &[(String, f64, f64)], source: &str) -> (Vec<f64>, usize) {
    let z_text = z_normalize(&pool.iter().map(|p| p.1).collect::<Vec<_>>());
    let z_concept = z_normalize(&pool.iter().map(|p| p.2).collect::<Vec<_>>());
    let combined: Vec<f64> = z_text.iter().zip(&z_concept).map(|(a, b)| a + b).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        combined[b]
            .partial_cmp(&combined[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| pool[a].0.cmp(&pool[b].0))
    });
    let rank = order
        .iter()
        .position(|&i| pool[i].0 == source)
        .map(|p| p + 1)
        .unwrap_or(usize::MAX);
    (combined, rank)
}

/// Round-trip filtering: embed each query, pool the top-C documents by text
/// similarity (source appended if absent), add concept similarity from the
/// extractor, z-normalize both families over the pool, and keep the query
/// iff its source ranks within the top N of the summed score.
#[allow(clippy::too_many_arguments)]
pub fn filter_queries(
    queries: &mut [GeneratedQuery],
    corpus_matrix: &EmbeddingMatrix,
    profiles: &ProfileSet,
    extractor: &ExtractorModel,
    embedder: &Embedder,
    cfg: &FilterConfig,
    k_topics_enriched: usize,
    k_phrases_enriched: usize,
    mode: crate::parallel::ExecMode,
) -> Result<(), QgenError> {
    let metric = embedder.metric();
    let results: Vec<Result<(bool, f64), QgenError>> =
        crate::parallel::map_collect(mode, &queries.iter().collect::<Vec<_>>(), |q| {
            let q_emb = embedder.embed_one(&q.text)?;
            let mut scored: Vec<(usize, f64)> = (0..corpus_matrix.len())
                .map(|i| similarity(&q_emb, corpus_matrix.row_at(i), metric).map(|s| (i, s)))
                .collect::<Result<_, _>>()?;
            scored.sort_by(|(ia, sa), (ib, sb)| {
                sb.partial_cmp(sa)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| corpus_matrix.ids()[*ia].cmp(&corpus_matrix.ids()[*ib]))
            });
            scored.truncate(cfg.pool_size);
            let source_pos = corpus_matrix
                .position(&q.doc_id)
                .ok_or_else(|| QgenError::MissingProfile(q.doc_id.clone()))?;
            if !scored.iter().any(|&(i, _)| i == source_pos) {
                let s = similarity(&q_emb, corpus_matrix.row_at(source_pos), metric)?;
                scored.push((source_pos, s));
            }
            let (_, y_q) = extractor.extract_from_text(
                embedder,
                &q.text,
                k_topics_enriched,
                k_phrases_enriched,
            )?;
            let pool: Vec<(String, f64, f64)> = scored
                .iter()
                .map(|&(i, s_text)| {
                    let id = corpus_matrix.ids()[i].clone();
                    let profile = profiles
                        .get(&id)
                        .ok_or_else(|| QgenError::MissingProfile(id.clone()))?;
                    let s_concept =
                        concept_similarity(&y_q, &profile.enriched_phrases, cfg.top_fraction);
                    Ok((id, s_text, s_concept))
                })
                .collect::<Result<_, QgenError>>()?;
            let (combined, rank) = combined_rank(&pool, &q.doc_id);
            let source_score = pool
                .iter()
                .position(|p| p.0 == q.doc_id)
                .map(|i| combined[i])
                .unwrap_or(f64::NEG_INFINITY);
            Ok((rank <= cfg.top_n, source_score))
        });
    for (q, res) in queries.iter_mut().zip(results) {
        let (kept, score) = res?;
        q.kept = kept;
        q.filter_score = score;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrainingPair<'a> {
    query: &'a str,
    positive_doc_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    negative_text: Option<&'a str>,
}

/// Write contrastive training pairs for the kept queries, one JSON object
/// per line. Returns the number of lines written.
pub fn export_training_pairs(queries: &[GeneratedQuery], path: &Path) -> Result<usize, QgenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut written = 0;
    for q in queries.iter().filter(|q| q.kept) {
        let pair = TrainingPair {
            query: &q.text,
            positive_doc_id: &q.doc_id,
            negative_text: q.negative_text.as_deref(),
        };
        serde_json::to_writer(&mut w, &pair).map_err(|e| QgenError::Schema {
            line: written + 1,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
        written += 1;
    }
    w.flush()?;
    if written == 0 {
        log::warn!("no kept queries; wrote an empty training-pair file");
    }
    Ok(written)
}

/// Write the full query set as JSONL in (doc, seq) order.
pub fn write_queries(path: &Path, queries: &[GeneratedQuery]) -> Result<(), QgenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for q in queries {
        serde_json::to_writer(&mut w, q).map_err(|e| QgenError::Schema {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_queries(path: &Path) -> Result<Vec<GeneratedQuery>, QgenError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| QgenError::Schema {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
