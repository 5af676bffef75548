//! Deterministic synthetic corpus for tests, benches, and the bundled
//! fixture: a four-field topic tree, a compositional phrase vocabulary, and
//! documents whose abstracts actually contain their subtopic's phrases, so
//! the lexical stages have real structure to find. Everything is index
//! arithmetic, no RNG, so regeneration is byte-stable.

use crate::config::PipelineConfig;
use crate::corpus::{Document, TaxonomyNode};
use crate::eval::Qrels;
use std::io::Write;
use std::path::Path;

struct FieldSpec {
    name: &'static str,
    subtopics: [&'static str; 4],
    adjectives: [&'static str; 6],
    nouns: [&'static str; 6],
}

const FIELDS: [FieldSpec; 4] = [
    FieldSpec {
        name: "machine learning",
        subtopics: [
            "representation learning",
            "graph neural networks",
            "sequence modeling",
            "contrastive pretraining",
        ],
        adjectives: ["latent", "disentangled", "equivariant", "self supervised", "multimodal", "sparse"],
        nouns: ["embedding space", "message passing", "attention kernel", "feature hierarchy", "token mixer", "training objective"],
    },
    FieldSpec {
        name: "information retrieval",
        subtopics: ["dense retrieval", "query expansion", "learning to rank", "index compression"],
        adjectives: ["lexical", "semantic", "hybrid", "calibrated", "late interaction", "zero shot"],
        nouns: ["relevance signal", "candidate pool", "inverted list", "passage embedding", "ranking loss", "term weighting"],
    },
    FieldSpec {
        name: "computational biology",
        subtopics: ["protein folding", "gene expression", "sequence alignment", "pathway inference"],
        adjectives: ["structural", "regulatory", "homologous", "single cell", "phylogenetic", "epigenetic"],
        nouns: ["motif discovery", "contact map", "expression profile", "alignment kernel", "variant calling", "interaction network"],
    },
    FieldSpec {
        name: "numerical optimization",
        subtopics: ["convex relaxation", "stochastic gradients", "trust region methods", "sparse recovery"],
        adjectives: ["proximal", "accelerated", "variance reduced", "second order", "projection free", "nonsmooth"],
        nouns: ["convergence rate", "duality gap", "line search", "momentum schedule", "constraint set", "step size"],
    },
];

const COMMON_PHRASES: [&str; 8] = [
    "empirical evaluation",
    "benchmark datasets",
    "ablation study",
    "computational cost",
    "open source implementation",
    "real world deployment",
    "statistical significance",
    "reproducibility checklist",
];

const PHRASES_PER_SUBTOPIC: usize = 8;

/// The generated bundle.
pub struct SyntheticData {
    pub documents: Vec<Document>,
    pub taxonomy: Vec<TaxonomyNode>,
    pub phrases: Vec<String>,
    /// (query_id, text) pairs for evaluation.
    pub eval_queries: Vec<(String, String)>,
    pub qrels: Qrels,
}

fn subtopic_phrase(field: usize, sub: usize, k: usize) -> String {
    // injective (sub, k) -> (adjective, noun) within a field's 6x6 grid, so
    // subtopics get disjoint phrase sets and the vocabulary stays large
    let f = &FIELDS[field];
    let p = sub * PHRASES_PER_SUBTOPIC + k;
    let adj = f.adjectives[p % 6];
    let noun = f.nouns[p / 6];
    format!("{adj} {noun}")
}

fn subtopic_phrases(field: usize, sub: usize) -> Vec<String> {
    (0..PHRASES_PER_SUBTOPIC)
        .map(|k| subtopic_phrase(field, sub, k))
        .collect()
}

fn doc_for(i: usize) -> Document {
    let field = i % 4;
    let sub = (i / 4) % 4;
    let spec = &FIELDS[field];
    let subtopic = spec.subtopics[sub];
    let pool = subtopic_phrases(field, sub);
    let rot = i / 16;
    let pick = |k: usize| pool[(rot + k) % pool.len()].clone();
    let neighbor_pool = subtopic_phrases(field, (sub + 1) % 4);
    let borrowed = neighbor_pool[rot % neighbor_pool.len()].clone();
    let common = COMMON_PHRASES[i % COMMON_PHRASES.len()];
    let title = format!("{} for {}", capitalize(&pick(0)), subtopic);
    let abstract_text = format!(
        "We study {} and {} in the context of {}. Prior work on {} rarely connects {} with {}. \
         Our approach builds on {} to strengthen {} systems, drawing on {}. \
         An extensive {} covers {} and reports {}.",
        pick(1),
        pick(2),
        subtopic,
        spec.name,
        pick(3),
        borrowed,
        pick(4),
        subtopic,
        pick(5),
        common,
        pick(6),
        pick(7),
    );
    Document {
        id: format!("d{i:04}"),
        title,
        abstract_text,
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Build the synthetic bundle with `n_docs` documents and one eval query per
/// `queries_every` documents.
pub fn synthetic_data(n_docs: usize, queries_every: usize) -> SyntheticData {
    let mut taxonomy = vec![TaxonomyNode {
        id: "t-root".into(),
        name: "science".into(),
        parent: None,
        level: 0,
    }];
    for (f, spec) in FIELDS.iter().enumerate() {
        taxonomy.push(TaxonomyNode {
            id: format!("t{f}"),
            name: spec.name.to_string(),
            parent: Some("t-root".into()),
            level: 0,
        });
        for (s, sub) in spec.subtopics.iter().enumerate() {
            taxonomy.push(TaxonomyNode {
                id: format!("t{f}.{s}"),
                name: sub.to_string(),
                parent: Some(format!("t{f}")),
                level: 0,
            });
            for (l, suffix) in ["methods", "analysis"].iter().enumerate() {
                taxonomy.push(TaxonomyNode {
                    id: format!("t{f}.{s}.{l}"),
                    name: format!("{sub} {suffix}"),
                    parent: Some(format!("t{f}.{s}")),
                    level: 0,
                });
            }
        }
    }

    let mut phrases = Vec::new();
    for f in 0..4 {
        for s in 0..4 {
            phrases.extend(subtopic_phrases(f, s));
        }
    }
    phrases.extend(COMMON_PHRASES.iter().map(|s| s.to_string()));

    let documents: Vec<Document> = (0..n_docs).map(doc_for).collect();

    let mut eval_queries = Vec::new();
    let mut qrels = Qrels::default();
    if queries_every > 0 {
        for (j, target) in (0..n_docs).step_by(queries_every).enumerate() {
            let field = target % 4;
            let sub = (target / 4) % 4;
            let phrase = subtopic_phrase(field, sub, (target / 16 + 1) % PHRASES_PER_SUBTOPIC);
            let qid = format!("q{j:03}");
            let text = format!("how does {} affect {}", phrase, FIELDS[field].subtopics[sub]);
            qrels.insert(&qid, &documents[target].id, 2);
            // a few same-subtopic documents are partially relevant
            let mut added = 0;
            let mut cursor = target + 16;
            while added < 3 && cursor < n_docs {
                qrels.insert(&qid, &documents[cursor].id, 1);
                cursor += 16;
                added += 1;
            }
            eval_queries.push((qid, text));
        }
    }

    SyntheticData {
        documents,
        taxonomy,
        phrases,
        eval_queries,
        qrels,
    }
}

/// Materialize the bundle as the on-disk fixture layout: corpus.jsonl,
/// taxonomy.json, phrases.txt, eval_queries.jsonl, qrels.txt, config.json.
pub fn write_fixture(dir: &Path, n_docs: usize, queries_every: usize) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let data = synthetic_data(n_docs, queries_every);

    let mut corpus = std::fs::File::create(dir.join("corpus.jsonl"))?;
    for doc in &data.documents {
        writeln!(corpus, "{}", serde_json::to_string(doc).expect("document serializes"))?;
    }

    #[derive(serde::Serialize)]
    struct NodeRecord<'a> {
        id: &'a str,
        name: &'a str,
        parent: Option<&'a str>,
    }
    let records: Vec<NodeRecord> = data
        .taxonomy
        .iter()
        .map(|n| NodeRecord {
            id: &n.id,
            name: &n.name,
            parent: n.parent.as_deref(),
        })
        .collect();
    std::fs::write(
        dir.join("taxonomy.json"),
        serde_json::to_string_pretty(&records).expect("taxonomy serializes"),
    )?;

    std::fs::write(dir.join("phrases.txt"), data.phrases.join("\n") + "\n")?;

    let mut queries = std::fs::File::create(dir.join("eval_queries.jsonl"))?;
    for (qid, text) in &data.eval_queries {
        writeln!(
            queries,
            "{}",
            serde_json::json!({ "query_id": qid, "text": text })
        )?;
    }

    crate::eval::write_qrels(&dir.join("qrels.txt"), &data.qrels)
        .map_err(|e| std::io::Error::other(e.to_string()))?;

    let mut cfg = PipelineConfig::default();
    cfg.corpus = "corpus.jsonl".into();
    cfg.taxonomy = "taxonomy.json".into();
    cfg.phrases = "phrases.txt".into();
    cfg.workdir = "work".into();
    cfg.eval_queries = Some("eval_queries.jsonl".into());
    cfg.qrels = Some("qrels.txt".into());
    std::fs::write(dir.join("config.json"), cfg.effective_json())?;
    Ok(())
}
