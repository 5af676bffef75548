//! Static inputs: the document corpus, the topic taxonomy, and the phrase
//! vocabulary.
//!
//! All three are immutable after load and safe to share across workers.
//!
//! File formats:
//! * corpus: JSONL, one `{"id", "title", "abstract"}` object per line;
//! * taxonomy: JSON array of `{"id", "name", "parent"}` (parent `null` for
//!   the root), levels derived by BFS from the root;
//! * phrases: one phrase per line, lowercased and deduplicated on load.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("duplicate document id \"{0}\"")]
    DuplicateDocId(String),
    #[error("duplicate taxonomy node id \"{0}\"")]
    DuplicateNodeId(String),
    #[error("taxonomy has no root node")]
    NoRoot,
    #[error("taxonomy has multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("taxonomy node \"{child}\" references unknown parent \"{parent}\"")]
    DanglingParent { child: String, parent: String },
    #[error("taxonomy contains a cycle involving node \"{0}\"")]
    Cycle(String),
    #[error("unknown taxonomy node id \"{0}\"")]
    UnknownNode(String),
    #[error("phrase vocabulary at {0} is empty")]
    EmptyVocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single corpus record. The canonical text used everywhere downstream is
/// `title + " " + abstract`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

impl Document {
    /// Canonical document text: title and abstract joined by a single space.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

/// An ordered document collection with O(1) id lookup. Ordinals follow file
/// order and are stable for the lifetime of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateDocId(doc.id.clone()));
            }
        }
        Ok(Self { documents, index })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.documents[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn at(&self, ordinal: usize) -> &Document {
        &self.documents[ordinal]
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter()
    }
}

/// Load a JSONL corpus. Errors report the offending 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut documents = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Schema {
            line: lineno,
            msg: e.to_string(),
        })?;
        if doc.id.is_empty() {
            return Err(CorpusError::Schema {
                line: lineno,
                msg: "document id must be nonempty".into(),
            });
        }
        documents.push(doc);
    }
    Corpus::from_documents(documents)
}

/// One topic node. `level` is the BFS depth from the root (root = 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: String,
    pub name: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub level: u32,
}

/// A rooted topic tree. Children keep file-appearance order; every node is
/// reachable from the single root.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    nodes: HashMap<String, TaxonomyNode>,
    children: HashMap<String, Vec<String>>,
    order: Vec<String>,
    root: String,
}

impl Taxonomy {
    pub fn from_records(records: Vec<TaxonomyNode>) -> Result<Self, CorpusError> {
        let mut nodes: HashMap<String, TaxonomyNode> = HashMap::with_capacity(records.len());
        let mut children: HashMap<String, Vec<String>> = HashMap::new();
        let mut order = Vec::with_capacity(records.len());
        let mut roots = Vec::new();
        for rec in &records {
            if nodes.contains_key(&rec.id) {
                return Err(CorpusError::DuplicateNodeId(rec.id.clone()));
            }
            nodes.insert(rec.id.clone(), rec.clone());
            order.push(rec.id.clone());
            match &rec.parent {
                None => roots.push(rec.id.clone()),
                Some(p) => children.entry(p.clone()).or_default().push(rec.id.clone()),
            }
        }
        let root = match roots.len() {
            0 => return Err(CorpusError::NoRoot),
            1 => roots.pop().expect("one root"),
            _ => return Err(CorpusError::MultipleRoots(roots)),
        };
        for rec in &records {
            if let Some(p) = &rec.parent {
                if !nodes.contains_key(p) {
                    return Err(CorpusError::DanglingParent {
                        child: rec.id.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }
        // BFS from the root assigns levels; anything unreached sits on a cycle.
        let mut visited = 0usize;
        let mut queue = VecDeque::from([root.clone()]);
        nodes.get_mut(&root).expect("root exists").level = 0;
        let mut seen: HashMap<String, bool> = HashMap::with_capacity(nodes.len());
        seen.insert(root.clone(), true);
        while let Some(id) = queue.pop_front() {
            visited += 1;
            let level = nodes[&id].level;
            let kids = children.get(&id).cloned().unwrap_or_default();
            for child in kids {
                if seen.insert(child.clone(), true).is_some() {
                    return Err(CorpusError::Cycle(child));
                }
                nodes.get_mut(&child).expect("child exists").level = level + 1;
                queue.push_back(child);
            }
        }
        if visited != nodes.len() {
            let stray = order
                .iter()
                .find(|id| !seen.contains_key(*id))
                .expect("some node unreached")
                .clone();
            return Err(CorpusError::Cycle(stray));
        }
        Ok(Self {
            nodes,
            children,
            order,
            root,
        })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&TaxonomyNode> {
        self.nodes.get(id)
    }

    pub fn children(&self, id: &str) -> &[String] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Node ids in file-appearance order.
    pub fn node_order(&self) -> &[String] {
        &self.order
    }

    /// The topic label space: every non-root node id in file order.
    pub fn topics(&self) -> Vec<String> {
        self.order.iter().filter(|id| **id != self.root).cloned().collect()
    }

    /// All node ids in the subtree rooted at `id` (inclusive), preorder.
    pub fn subtree_nodes(&self, id: &str) -> Result<Vec<String>, CorpusError> {
        if !self.nodes.contains_key(id) {
            return Err(CorpusError::UnknownNode(id.to_string()));
        }
        let mut out = Vec::new();
        let mut stack = vec![id.to_string()];
        while let Some(n) = stack.pop() {
            out.push(n.clone());
            // push in reverse so children come out in file order
            for child in self.children(&n).iter().rev() {
                stack.push(child.clone());
            }
        }
        Ok(out)
    }

    /// File-order records, the canonical serialization of the tree.
    pub fn to_records(&self) -> Vec<TaxonomyNode> {
        self.order.iter().map(|id| self.nodes[id].clone()).collect()
    }
}

/// Load a taxonomy from a JSON array of node records.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, CorpusError> {
    let raw = fs::read_to_string(path)?;
    let records: Vec<TaxonomyNode> = serde_json::from_str(&raw).map_err(|e| CorpusError::Schema {
        line: e.line(),
        msg: e.to_string(),
    })?;
    Taxonomy::from_records(records)
}

/// The phrase label space: lowercase phrases with stable ordinals.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseVocab {
    phrases: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhraseVocab {
    /// Lowercases and deduplicates, keeping first occurrence order.
    pub fn from_phrases<I: IntoIterator<Item = String>>(phrases: I) -> Self {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        for p in phrases {
            let norm = p.trim().to_lowercase();
            if norm.is_empty() {
                continue;
            }
            if !index.contains_key(&norm) {
                index.insert(norm.clone(), out.len());
                out.push(norm);
            }
        }
        Self { phrases: out, index }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrase(&self, ordinal: usize) -> &str {
        &self.phrases[ordinal]
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn ordinal(&self, phrase: &str) -> Option<usize> {
        self.index.get(&phrase.to_lowercase()).copied()
    }
}

/// Load a newline-delimited phrase vocabulary. Empty vocabularies are an
/// error: nothing downstream can work without phrases.
pub fn load_phrase_vocab(path: &Path) -> Result<PhraseVocab, CorpusError> {
    let raw = fs::read_to_string(path)?;
    let vocab = PhraseVocab::from_phrases(raw.lines().map(str::to_string));
    if vocab.is_empty() {
        return Err(CorpusError::EmptyVocab(path.display().to_string()));
    }
    Ok(vocab)
}
