//! Offline concept-focused snippets and the query-time rescoring variants.
//!
//! Snippets are generated once per (document, concept-aware query) pair,
//! embedded, and indexed; search then blends each candidate's base score
//! with the similarity of its best (or average) snippet, no LLM in the loop.
//! The concept-match variant reuses the filtering score (z-normalized text
//! plus concept similarity), and the hypothetical-document variant trades
//! query-time LLM calls for query expansion.

use crate::corpus::{Corpus, Document};
use crate::embed::{similarity, Embedder, Metric};
use crate::eval::{RankedEntry, RankedList};
use crate::extractor::ExtractorModel;
use crate::llm::Gateway;
use crate::profile::ProfileSet;
use crate::qgen::{concept_similarity, GeneratedQuery};
use crate::vecstore::EmbeddingMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("build_snippets requires a nonempty query set for document \"{0}\"")]
    NoQueries(String),
    #[error("snippet file line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("no snippet embedding for \"{0}\"")]
    MissingEmbedding(String),
    #[error("unknown document \"{0}\" in ranking")]
    UnknownDoc(String),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Extractor(#[from] crate::extractor::ExtractorError),
    #[error(transparent)]
    VecStore(#[from] crate::vecstore::VecStoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One concept-focused snippet with its source query position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub query_seq: u32,
    pub text: String,
}

impl Snippet {
    /// Row id in the snippet embedding matrix.
    pub fn embedding_id(&self) -> String {
        format!("{}#{}", self.doc_id, self.query_seq)
    }
}

/// Rescoring variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescoreVariant {
    SnippetMax,
    SnippetAverage,
    ConceptMatch,
    Hyde,
    None,
}

/// Rescoring knobs. `alpha` balances base and snippet similarity; only the
/// top `top_k` base candidates are ever rescored.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RescoreConfig {
    pub alpha: f64,
    pub top_k: usize,
    pub variant: RescoreVariant,
    pub hyde_n: usize,
}

/// All snippets plus their embeddings, grouped by document.
#[derive(Debug, Clone)]
pub struct SnippetIndex {
    snippets: Vec<Snippet>,
    per_doc: HashMap<String, Vec<usize>>,
    embeddings: EmbeddingMatrix,
}

impl SnippetIndex {
    pub fn from_parts(snippets: Vec<Snippet>, embeddings: EmbeddingMatrix) -> Result<Self, ExpandError> {
        let mut per_doc: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, s) in snippets.iter().enumerate() {
            if embeddings.row(&s.embedding_id()).is_none() {
                return Err(ExpandError::MissingEmbedding(s.embedding_id()));
            }
            per_doc.entry(s.doc_id.clone()).or_default().push(i);
        }
        Ok(Self {
            snippets,
            per_doc,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn for_doc(&self, doc_id: &str) -> impl Iterator<Item = &Snippet> {
        self.per_doc
            .get(doc_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.snippets[i])
    }

    pub fn embedding(&self, snippet: &Snippet) -> &[f32] {
        self.embeddings
            .row(&snippet.embedding_id())
            .expect("validated at construction")
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }
}

/// Generate and embed one snippet per query for a document. Appends each
/// snippet to `out` as it completes so partial progress survives failures.
pub fn build_snippets(
    doc: &Document,
    queries: &[&GeneratedQuery],
    gateway: &Gateway,
    out: &mut Vec<Snippet>,
) -> Result<(), ExpandError> {
    if queries.is_empty() {
        return Err(ExpandError::NoQueries(doc.id.clone()));
    }
    for q in queries {
        let text = gateway.generate_snippet(doc, &q.text)?;
        out.push(Snippet {
            doc_id: doc.id.clone(),
            query_seq: q.seq,
            text,
        });
    }
    Ok(())
}

/// Shared rescoring skeleton: replace the scores of the top-K block using
/// `snippet_term`, re-sort the block (ties ascending doc id), renumber, and
/// keep the tail bit-identical.
fn rescore_block(
    base: &RankedList,
    cfg: &RescoreConfig,
    mut snippet_term: impl FnMut(&RankedEntry) -> Result<f64, ExpandError>,
) -> Result<RankedList, ExpandError> {
    let cut = cfg.top_k.min(base.entries.len());
    let mut entries: Vec<RankedEntry> = Vec::with_capacity(base.entries.len());
    for e in &base.entries[..cut] {
        let s_snippet = snippet_term(e)?;
        let rel = (1.0 - cfg.alpha) * e.score + cfg.alpha * s_snippet;
        entries.push(RankedEntry {
            doc_id: e.doc_id.clone(),
            score: rel,
            rank: 0,
        });
    }
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    entries.extend(base.entries[cut..].iter().cloned());
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i as u32 + 1;
    }
    Ok(RankedList {
        query_id: base.query_id.clone(),
        entries,
    })
}

/// Blend each top-K candidate's base score with its best snippet similarity:
/// `rel = (1 - alpha) * sim(q, d) + alpha * max_s sim(q, s)`. Documents
/// without snippets fall back to the base score as the snippet term.
pub fn rescore_with_snippets(
    q_emb: &[f32],
    base: &RankedList,
    index: &SnippetIndex,
    cfg: &RescoreConfig,
    metric: Metric,
) -> Result<RankedList, ExpandError> {
    rescore_block(base, cfg, |entry| {
        let mut best: Option<f64> = None;
        for s in index.for_doc(&entry.doc_id) {
            let sim = similarity(q_emb, index.embedding(s), metric)?;
            best = Some(best.map_or(sim, |b: f64| b.max(sim)));
        }
        Ok(best.unwrap_or(entry.score))
    })
}

/// Like [`rescore_with_snippets`] but the snippet term is the similarity to
/// the mean snippet embedding (renormalized to unit length under cosine).
pub fn rescore_average(
    q_emb: &[f32],
    base: &RankedList,
    index: &SnippetIndex,
    cfg: &RescoreConfig,
    metric: Metric,
) -> Result<RankedList, ExpandError> {
    rescore_block(base, cfg, |entry| {
        let mut mean = vec![0.0f64; q_emb.len()];
        let mut count = 0usize;
        for s in index.for_doc(&entry.doc_id) {
            for (m, &v) in mean.iter_mut().zip(index.embedding(s)) {
                *m += v as f64;
            }
            count += 1;
        }
        if count == 0 {
            return Ok(entry.score);
        }
        let mut avg: Vec<f32> = mean.into_iter().map(|v| (v / count as f64) as f32).collect();
        if metric == Metric::Cosine {
            let norm: f64 = avg.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in &mut avg {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        Ok(similarity(q_emb, &avg, metric)?)
    })
}

/// Concept-matching rescoring: over the top-K pool, `rel = z(s_text) +
/// z(s_concept)`, the same combination the round-trip filter uses.
#[allow(clippy::too_many_arguments)]
pub fn rescore_concept_match(
    q_text: &str,
    base: &RankedList,
    profiles: &ProfileSet,
    extractor: &ExtractorModel,
    embedder: &Embedder,
    cfg: &RescoreConfig,
    top_fraction: f64,
    k_topics_enriched: usize,
    k_phrases_enriched: usize,
) -> Result<RankedList, ExpandError> {
    let cut = cfg.top_k.min(base.entries.len());
    let (_, y_q) = extractor.extract_from_text(embedder, q_text, k_topics_enriched, k_phrases_enriched)?;
    let mut pool: Vec<(String, f64, f64)> = Vec::with_capacity(cut);
    for e in &base.entries[..cut] {
        let profile = profiles
            .get(&e.doc_id)
            .ok_or_else(|| ExpandError::UnknownDoc(e.doc_id.clone()))?;
        let s_concept = concept_similarity(&y_q, &profile.enriched_phrases, top_fraction);
        pool.push((e.doc_id.clone(), e.score, s_concept));
    }
    let z_text = crate::qgen::z_normalize(&pool.iter().map(|p| p.1).collect::<Vec<_>>());
    let z_concept = crate::qgen::z_normalize(&pool.iter().map(|p| p.2).collect::<Vec<_>>());
    let mut block: Vec<RankedEntry> = pool
        .into_iter()
        .enumerate()
        .map(|(i, (doc_id, _, _))| RankedEntry {
            doc_id,
            score: z_text[i] + z_concept[i],
            rank: 0,
        })
        .collect();
    // degenerate pools (all z = 0) keep the base order via the stable sort
    block.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut entries = block;
    entries.extend(base.entries[cut..].iter().cloned());
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i as u32 + 1;
    }
    Ok(RankedList {
        query_id: base.query_id.clone(),
        entries,
    })
}

/// Query expansion with `n` generated hypothetical documents: every corpus
/// document is scored by the uniform mean of its similarity to the query and
/// to each hypothetical document. `n = 0` degenerates to plain dense search.
pub fn hyde_expand(
    query_id: &str,
    q_text: &str,
    q_emb: &[f32],
    gateway: &Gateway,
    embedder: &Embedder,
    n: usize,
    matrix: &EmbeddingMatrix,
    k: usize,
    metric: Metric,
) -> Result<RankedList, ExpandError> {
    let hypo_embs: Vec<Vec<f32>> = if n == 0 {
        Vec::new()
    } else {
        let docs = gateway.generate_hypothetical_docs(q_text, n)?;
        embedder.embed_batch(&docs)?
    };
    let mut scored = Vec::with_capacity(matrix.len());
    for i in 0..matrix.len() {
        let row = matrix.row_at(i);
        let mut total = similarity(q_emb, row, metric)?;
        for h in &hypo_embs {
            total += similarity(h, row, metric)?;
        }
        scored.push((matrix.ids()[i].clone(), total / (n as f64 + 1.0)));
    }
    let mut list = RankedList::from_scored(query_id.to_string(), scored);
    list.entries.truncate(k);
    Ok(list)
}

/// Write snippets as JSONL in (doc, seq) order.
pub fn write_snippets(path: &Path, snippets: &[Snippet]) -> Result<(), ExpandError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in snippets {
        serde_json::to_writer(&mut w, s).map_err(|e| ExpandError::Schema {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snippets(path: &Path) -> Result<Vec<Snippet>, ExpandError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExpandError::Schema {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Convenience: build snippets for every document that has queries, in
/// corpus order. Returns the snippets even if a later document fails.
pub fn build_all_snippets(
    corpus: &Corpus,
    queries: &[GeneratedQuery],
    gateway: &Gateway,
) -> (Vec<Snippet>, Option<ExpandError>) {
    let mut by_doc: HashMap<&str, Vec<&GeneratedQuery>> = HashMap::new();
    for q in queries {
        by_doc.entry(q.doc_id.as_str()).or_default().push(q);
    }
    let mut out = Vec::new();
    for doc in corpus.iter() {
        let Some(doc_queries) = by_doc.get_mut(doc.id.as_str()) else {
            continue;
        };
        doc_queries.sort_by_key(|q| q.seq);
        if let Err(e) = build_snippets(doc, doc_queries, gateway, &mut out) {
            log::warn!("snippet generation stopped at document {}: {e}", doc.id);
            return (out, Some(e));
        }
    }
    (out, None)
}
