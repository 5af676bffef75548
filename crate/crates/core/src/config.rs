//! Pipeline configuration: one JSON file holding input paths, provider
//! settings, and every hyperparameter, with range validation and
//! relative-path resolution against the config file's own directory.

use crate::embed::{Metric, ProviderConfig};
use crate::eval::NdcgGain;
use crate::extractor::TrainConfig;
use crate::llm::{GatewayConfig, TemplateKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {0}: {1}")]
    Parse(String, String),
    #[error("config field \"{field}\": {msg}")]
    Field { field: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Query prompting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Plain,
    Fewshot,
    Pairwise,
}

impl Scheme {
    pub fn template_kind(&self) -> TemplateKind {
        match self {
            Scheme::Plain => TemplateKind::QueryPlain,
            Scheme::Fewshot => TemplateKind::QueryFewshot,
            Scheme::Pairwise => TemplateKind::QueryPairwise,
        }
    }
}

/// All numeric knobs in one place. Defaults are the documented settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Core topics kept per document by LLM selection.
    pub k_topics: usize,
    /// Core phrases kept per document by LLM selection.
    pub k_phrases: usize,
    /// Enriched topics per document.
    pub k_topics_enriched: usize,
    /// Enriched phrases per document.
    pub k_phrases_enriched: usize,
    /// Queries generated per document (M).
    pub queries_per_doc: usize,
    /// Floor for the under-coverage distribution.
    pub epsilon: f64,
    /// Round-trip filter keeps a query iff its source ranks within top N.
    pub filter_top_n: usize,
    /// Filter candidate pool / z-score population size.
    pub filter_pool_size: usize,
    /// Support fraction used by concept similarity.
    pub concept_top_fraction: f64,
    /// Distinctiveness fraction kept as phrase candidates.
    pub candidate_fraction: f64,
    /// Topical neighborhood size for distinctiveness.
    pub neighbors: usize,
    /// Snippet-blend weight.
    pub alpha: f64,
    /// Candidates rescored per query.
    pub rescore_top_k: usize,
    /// Depth of the base dense run.
    pub search_depth: usize,
    /// Hypothetical documents per query for the hyde variant.
    pub hyde_n: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub ndcg_gain: NdcgGain,
    pub eval_ks: Vec<usize>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            k_topics: 10,
            k_phrases: 15,
            k_topics_enriched: 15,
            k_phrases_enriched: 30,
            queries_per_doc: 5,
            epsilon: 1e-3,
            filter_top_n: 10,
            filter_pool_size: 1000,
            concept_top_fraction: 0.1,
            candidate_fraction: 0.2,
            neighbors: 100,
            alpha: 0.8,
            rescore_top_k: 1000,
            search_depth: 1000,
            hyde_n: 5,
            bm25_k1: 0.9,
            bm25_b: 0.4,
            scheme: Scheme::Plain,
            seed: 7,
            ndcg_gain: NdcgGain::Linear,
            eval_ks: vec![10, 20, 100],
        }
    }
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::mock(64, 0)
    }
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig::mock()
    }
}

/// The full pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub taxonomy: PathBuf,
    pub phrases: PathBuf,
    pub workdir: PathBuf,
    /// JSONL of `{"query_id", "text"}` evaluation queries.
    pub eval_queries: Option<PathBuf>,
    /// TREC qrels for evaluation.
    pub qrels: Option<PathBuf>,
    pub embed: ProviderConfig,
    /// Optional separate provider for taxonomy-name embeddings; falls back
    /// to `embed`.
    pub embed_taxonomy: Option<ProviderConfig>,
    pub llm: GatewayConfig,
    pub params: Params,
    pub extractor: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            taxonomy: PathBuf::from("taxonomy.json"),
            phrases: PathBuf::from("phrases.txt"),
            workdir: PathBuf::from("work"),
            eval_queries: None,
            qrels: None,
            embed: ProviderConfig::default(),
            embed_taxonomy: None,
            llm: GatewayConfig::default(),
            params: Params::default(),
            extractor: TrainConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Load and validate. Relative paths are taken relative to the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        let mut cfg: PipelineConfig = serde_json::from_str(&raw)
            .map_err(|e| ConfigError::Parse(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        resolve(&base, &mut cfg.corpus);
        resolve(&base, &mut cfg.taxonomy);
        resolve(&base, &mut cfg.phrases);
        resolve(&base, &mut cfg.workdir);
        if let Some(p) = cfg.eval_queries.as_mut() {
            resolve(&base, p);
        }
        if let Some(p) = cfg.qrels.as_mut() {
            resolve(&base, p);
        }
        if let Some(p) = cfg.embed.cache_path.as_mut() {
            resolve(&base, p);
        }
        if let Some(t) = cfg.embed_taxonomy.as_mut() {
            if let Some(p) = t.cache_path.as_mut() {
                resolve(&base, p);
            }
        }
        if let Some(p) = cfg.llm.fixtures_dir.as_mut() {
            resolve(&base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |field: &'static str, msg: String| Err(ConfigError::Field { field, msg });
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.alpha) {
            return field("alpha", format!("{} outside [0, 1]", p.alpha));
        }
        if p.epsilon <= 0.0 {
            return field("epsilon", format!("{} must be > 0", p.epsilon));
        }
        if !(p.concept_top_fraction > 0.0 && p.concept_top_fraction <= 1.0) {
            return field("concept_top_fraction", format!("{} outside (0, 1]", p.concept_top_fraction));
        }
        if !(p.candidate_fraction > 0.0 && p.candidate_fraction <= 1.0) {
            return field("candidate_fraction", format!("{} outside (0, 1]", p.candidate_fraction));
        }
        if p.filter_top_n == 0 || p.filter_top_n > p.filter_pool_size {
            return field(
                "filter_top_n",
                format!("{} must be in 1..=filter_pool_size ({})", p.filter_top_n, p.filter_pool_size),
            );
        }
        if p.queries_per_doc == 0 {
            return field("queries_per_doc", "must be >= 1".into());
        }
        if p.k_phrases_enriched < p.queries_per_doc {
            return field(
                "k_phrases_enriched",
                format!(
                    "{} must be >= queries_per_doc ({}) so later queries get conditions",
                    p.k_phrases_enriched, p.queries_per_doc
                ),
            );
        }
        for (name, v) in [
            ("k_topics", p.k_topics),
            ("k_phrases", p.k_phrases),
            ("k_topics_enriched", p.k_topics_enriched),
            ("rescore_top_k", p.rescore_top_k),
            ("search_depth", p.search_depth),
            ("neighbors", p.neighbors),
        ] {
            if v == 0 {
                return match name {
                    "k_topics" => field("k_topics", "must be >= 1".into()),
                    "k_phrases" => field("k_phrases", "must be >= 1".into()),
                    "k_topics_enriched" => field("k_topics_enriched", "must be >= 1".into()),
                    "rescore_top_k" => field("rescore_top_k", "must be >= 1".into()),
                    "search_depth" => field("search_depth", "must be >= 1".into()),
                    _ => field("neighbors", "must be >= 1".into()),
                };
            }
        }
        if p.bm25_k1 < 0.0 {
            return field("bm25_k1", format!("{} must be >= 0", p.bm25_k1));
        }
        if !(0.0..=1.0).contains(&p.bm25_b) {
            return field("bm25_b", format!("{} outside [0, 1]", p.bm25_b));
        }
        if p.eval_ks.is_empty() {
            return field("eval_ks", "must list at least one cutoff".into());
        }
        if self.embed.dim == 0 {
            return field("embed.dim", "must be >= 1".into());
        }
        if self.embed.batch_size == 0 {
            return field("embed.batch_size", "must be >= 1".into());
        }
        self.extractor
            .validate()
            .map_err(|e| ConfigError::Field { field: "extractor", msg: e.to_string() })?;
        Ok(())
    }

    /// Fully-resolved config as pretty JSON, for provenance.
    pub fn effective_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The embedding cache directory: configured path, or `workdir/emb_cache`.
    pub fn cache_dir(&self) -> PathBuf {
        self.embed
            .cache_path
            .clone()
            .unwrap_or_else(|| self.workdir.join("emb_cache"))
    }

    pub fn bm25_params(&self) -> crate::lexical::Bm25Params {
        crate::lexical::Bm25Params {
            k1: self.params.bm25_k1,
            b: self.params.bm25_b,
        }
    }

    pub fn metric(&self) -> Metric {
        self.embed.metric
    }
}
