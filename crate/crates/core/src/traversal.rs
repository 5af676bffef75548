//! Candidate topic selection by top-down taxonomy traversal.
//!
//! Starting from the root, each visited node at level `l` ranks its children
//! by subtree-mean embedding similarity to the document and descends into the
//! top `min(l + 2, children)` of them, so the beam widens with depth. Every
//! visited node except the root becomes a candidate.

use crate::corpus::Taxonomy;
use crate::embed::{similarity, Metric};
use crate::vecstore::EmbeddingMatrix;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraversalError {
    #[error("no name embedding for taxonomy node \"{0}\"")]
    MissingEmbedding(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

/// Precomputed subtree node lists, shared across documents.
#[derive(Debug, Clone)]
pub struct SubtreeCache {
    lists: HashMap<String, Vec<String>>,
}

impl SubtreeCache {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let mut lists = HashMap::with_capacity(taxonomy.len());
        for id in taxonomy.node_order() {
            let nodes = taxonomy.subtree_nodes(id).expect("node comes from the taxonomy");
            lists.insert(id.clone(), nodes);
        }
        Self { lists }
    }

    pub fn subtree(&self, id: &str) -> Option<&[String]> {
        self.lists.get(id).map(Vec::as_slice)
    }
}

/// Outcome of one document's traversal.
#[derive(Debug, Clone)]
pub struct TraversalResult {
    /// Visited nodes minus the root, in visit order, deduplicated.
    pub candidates: Vec<String>,
    /// Number of visited nodes including the root.
    pub visited_count: usize,
    /// Similarity for every node that was ranked during the walk.
    pub per_node_sim: HashMap<String, f64>,
}

/// Subtree-mean similarity: the mean cosine between the document embedding
/// and the name embedding of every node in `c`'s subtree, `c` included.
pub fn node_similarity(
    doc_emb: &[f32],
    node: &str,
    cache: &SubtreeCache,
    names: &EmbeddingMatrix,
) -> Result<f64, TraversalError> {
    let subtree = cache
        .subtree(node)
        .ok_or_else(|| TraversalError::MissingEmbedding(node.to_string()))?;
    let mut total = 0.0;
    for id in subtree {
        let emb = names
            .row(id)
            .ok_or_else(|| TraversalError::MissingEmbedding(id.clone()))?;
        total += similarity(doc_emb, emb, Metric::Cosine)?;
    }
    Ok(total / subtree.len() as f64)
}

/// Walk the taxonomy top-down for one document.
pub fn traverse_candidates(
    doc_emb: &[f32],
    taxonomy: &Taxonomy,
    cache: &SubtreeCache,
    names: &EmbeddingMatrix,
) -> Result<TraversalResult, TraversalError> {
    let mut candidates = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut per_node_sim = HashMap::new();
    let mut visited_count = 0usize;

    // depth-first; children of each node explored best-first
    let mut stack = vec![taxonomy.root().to_string()];
    while let Some(id) = stack.pop() {
        visited_count += 1;
        if id != taxonomy.root() && seen.insert(id.clone()) {
            candidates.push(id.clone());
        }
        let children = taxonomy.children(&id);
        if children.is_empty() {
            continue;
        }
        let level = taxonomy.node(&id).expect("visited node exists").level;
        let budget = (level as usize + 2).min(children.len());
        let mut ranked: Vec<(f64, &String)> = Vec::with_capacity(children.len());
        for child in children {
            let sim = node_similarity(doc_emb, child, cache, names)?;
            per_node_sim.insert(child.clone(), sim);
            ranked.push((sim, child));
        }
        ranked.sort_by(|(sa, ida), (sb, idb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ida.cmp(idb))
        });
        // push in reverse so the best-ranked child is visited first
        for (_, child) in ranked[..budget].iter().rev() {
            stack.push((*child).clone());
        }
    }

    Ok(TraversalResult {
        candidates,
        visited_count,
        per_node_sim,
    })
}
