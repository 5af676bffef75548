//! Concept indexing and concept-guided augmentation for scientific document
//! retrieval.
//!
//! The library builds a per-document concept index (core topics from a topic
//! taxonomy, core phrases from a mined vocabulary, and enriched importance
//! distributions from a small trained extractor), then uses that index to
//!
//! * generate coverage-controlled synthetic query sets with round-trip
//!   filtering ([`qgen`]),
//! * build concept-focused document snippets offline and rescore dense
//!   retrieval results against them at query time ([`expand`]),
//! * run exact dense search and standard IR evaluation ([`eval`]).
//!
//! Remote embedding/chat endpoints are abstracted behind [`embed::Embedder`]
//! and [`llm::Gateway`], both of which ship deterministic mock backends so
//! every pipeline stage runs offline.
//!
//! Corpus-wide loops (indexing, scoring, search) are data-parallel via rayon
//! when the `parallel` feature (default) is enabled; see [`parallel`].

pub mod config;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod expand;
pub mod extractor;
pub mod lexical;
pub mod llm;
pub mod parallel;
pub mod pipeline;
pub mod profile;
pub mod qgen;
pub mod synthetic;
pub mod traversal;
pub mod vecstore;

/// Umbrella error type for pipeline-level code paths.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Embed(#[from] embed::EmbedError),
    #[error(transparent)]
    VecStore(#[from] vecstore::VecStoreError),
    #[error(transparent)]
    Lexical(#[from] lexical::LexicalError),
    #[error(transparent)]
    Traversal(#[from] traversal::TraversalError),
    #[error(transparent)]
    Llm(#[from] llm::LlmError),
    #[error(transparent)]
    Extractor(#[from] extractor::ExtractorError),
    #[error(transparent)]
    Profile(#[from] profile::ProfileError),
    #[error(transparent)]
    Qgen(#[from] qgen::QgenError),
    #[error(transparent)]
    Expand(#[from] expand::ExpandError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Pipeline(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// 64-bit seed derived from a base seed and a context string.
///
/// Used to give every (document, step) pair its own reproducible RNG stream.
pub(crate) fn derive_seed(base: u64, context: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(context.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is at least 8 bytes"))
}
