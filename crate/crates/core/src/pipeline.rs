//! Pipeline stages behind the CLI commands. Each stage reads its inputs,
//! writes its documented artifacts into the workdir, and nothing else;
//! artifacts carry no timestamps or absolute paths, so a fixed seed
//! reproduces them byte for byte.
//!
//! Artifact map (all under the configured workdir):
//! * `corpus_emb.*`, `taxonomy_emb.*`, `snippet_emb.*` — embedding matrices
//! * `candidates.jsonl` — per-document traversal candidates
//! * `concept_index.jsonl` — core + enriched concepts per document
//! * `extractor.manifest.json`, `extractor.params.f64`, `loss_history.json`
//! * `queries.jsonl`, `pairs.jsonl`, `snippets.jsonl`
//! * `run.base.txt`, `run.rescored.txt`, `metrics.json`, `stats.json`,
//!   `bench.json`

use crate::config::PipelineConfig;
use crate::corpus::{load_corpus, load_phrase_vocab, load_taxonomy, Corpus, PhraseVocab, Taxonomy};
use crate::embed::Embedder;
use crate::eval::{
    compute_metrics, dense_search, latency_stats, query_set_stats, read_qrels, read_run,
    write_run, LatencyStats, RankedList,
};
use crate::expand::{
    build_snippets, read_snippets, rescore_average, rescore_concept_match, rescore_with_snippets,
    write_snippets, RescoreConfig, RescoreVariant, Snippet, SnippetIndex,
};
use crate::extractor::ExtractorModel;
use crate::lexical::{scored_phrases, top_fraction_count, topic_neighbors, Bm25Index, ScoredPhrase};
use crate::llm::{ConceptKind, Gateway, PromptTemplate};
use crate::parallel::{map_collect, ExecMode};
use crate::profile::{read_profiles, write_profiles, ConceptProfile, ProfileSet};
use crate::qgen::{
    export_training_pairs, filter_queries, generate_query_set, read_queries, write_queries,
    FilterConfig, GeneratedQuery, QuerySetParams,
};
use crate::traversal::{traverse_candidates, SubtreeCache};
use crate::vecstore::EmbeddingMatrix;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CORPUS_EMB_STEM: &str = "corpus_emb";
pub const TAXONOMY_EMB_STEM: &str = "taxonomy_emb";
pub const SNIPPET_EMB_STEM: &str = "snippet_emb";
pub const EXTRACTOR_STEM: &str = "extractor";

fn missing(artifact: &str, produced_by: &str) -> Error {
    Error::Pipeline(format!(
        "missing artifact \"{artifact}\"; run `{produced_by}` first"
    ))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Corpus, Taxonomy, PhraseVocab)> {
    Ok((
        load_corpus(&cfg.corpus)?,
        load_taxonomy(&cfg.taxonomy)?,
        load_phrase_vocab(&cfg.phrases)?,
    ))
}

fn make_embedder(cfg: &PipelineConfig) -> Result<Embedder> {
    let mut provider = cfg.embed.clone();
    provider.cache_path = Some(cfg.cache_dir());
    Ok(Embedder::new(provider)?)
}

/// Embedder for taxonomy-name vectors: the dedicated provider when one is
/// configured, otherwise the main one.
fn make_taxonomy_embedder(cfg: &PipelineConfig) -> Result<Embedder> {
    match &cfg.embed_taxonomy {
        Some(provider) => {
            let mut provider = provider.clone();
            if provider.cache_path.is_none() {
                provider.cache_path = Some(cfg.workdir.join("emb_cache_taxonomy"));
            }
            Ok(Embedder::new(provider)?)
        }
        None => make_embedder(cfg),
    }
}

fn make_gateway(cfg: &PipelineConfig) -> Result<Gateway> {
    Ok(Gateway::new(cfg.llm.clone())?)
}

/// Topic label space and its inverse index.
fn topic_space(taxonomy: &Taxonomy) -> (Vec<String>, HashMap<String, usize>) {
    let topics = taxonomy.topics();
    let index = topics
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    (topics, index)
}

fn load_matrix(cfg: &PipelineConfig, stem: &str, produced_by: &str) -> Result<EmbeddingMatrix> {
    if !EmbeddingMatrix::exists(&cfg.workdir, stem) {
        return Err(missing(stem, produced_by));
    }
    Ok(EmbeddingMatrix::load(&cfg.workdir, stem)?)
}

fn load_profile_set(cfg: &PipelineConfig, taxonomy: &Taxonomy, vocab: &PhraseVocab) -> Result<ProfileSet> {
    let path = cfg.workdir.join("concept_index.jsonl");
    if !path.exists() {
        return Err(missing("concept_index.jsonl", "index build"));
    }
    let (_, topic_index) = topic_space(taxonomy);
    Ok(read_profiles(&path, &topic_index, vocab)?)
}

/// Build the concept index: embed corpus and taxonomy, traverse for topic
/// candidates, select core topics and phrases through the gateway, and write
/// `concept_index.jsonl` (enrichment left to `index enrich`).
pub fn cmd_index_build(cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    cmd_index_build_with_dumps(cfg, mode, false)
}

/// [`cmd_index_build`] with an optional `distinctiveness.jsonl` debug table
/// of every (document, matching phrase) score.
pub fn cmd_index_build_with_dumps(
    cfg: &PipelineConfig,
    mode: ExecMode,
    dump_distinctiveness: bool,
) -> Result<()> {
    std::fs::create_dir_all(&cfg.workdir)?;
    let (corpus, taxonomy, vocab) = load_inputs(cfg)?;
    let embedder = make_embedder(cfg)?;
    let gateway = make_gateway(cfg)?;

    let doc_ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
    let doc_texts: Vec<String> = corpus.iter().map(|d| d.text()).collect();
    let corpus_matrix = embedder.embed_matrix(&doc_ids, &doc_texts)?;
    corpus_matrix.save(&cfg.workdir, CORPUS_EMB_STEM)?;

    // the taxonomy-similarity role may use its own encoder; both sides of
    // the doc-vs-name cosine must come from the same provider
    let tax_embedder = make_taxonomy_embedder(cfg)?;
    let node_ids: Vec<String> = taxonomy.node_order().to_vec();
    let node_names: Vec<String> = node_ids
        .iter()
        .map(|id| taxonomy.node(id).expect("node exists").name.clone())
        .collect();
    let name_matrix = tax_embedder.embed_matrix(&node_ids, &node_names)?;
    name_matrix.save(&cfg.workdir, TAXONOMY_EMB_STEM)?;
    let tax_doc_matrix = if cfg.embed_taxonomy.is_some() {
        tax_embedder.embed_matrix(&doc_ids, &doc_texts)?
    } else {
        corpus_matrix.clone()
    };

    let subtrees = SubtreeCache::new(&taxonomy);
    let (_, topic_index) = topic_space(&taxonomy);

    // pass 1: traversal candidates and core-topic selection
    let per_doc: Vec<Result<(Vec<String>, Vec<usize>)>> =
        map_collect(mode, corpus.documents(), |doc| {
            let emb = tax_doc_matrix.row(&doc.id).expect("embedded above");
            let result = traverse_candidates(emb, &taxonomy, &subtrees, &name_matrix)
                .map_err(Error::from)?;
            let mut names = Vec::new();
            let mut name_to_node: HashMap<String, &str> = HashMap::new();
            for node_id in &result.candidates {
                let name = &taxonomy.node(node_id).expect("candidate exists").name;
                let key = name.to_lowercase();
                if !name_to_node.contains_key(&key) {
                    name_to_node.insert(key, node_id);
                    names.push(name.clone());
                }
            }
            let picked = gateway
                .select_concepts(doc, &names, cfg.params.k_topics, ConceptKind::Topic)
                .map_err(Error::from)?;
            let core: Vec<usize> = picked
                .iter()
                .filter_map(|name| name_to_node.get(&name.to_lowercase()))
                .filter_map(|node_id| topic_index.get(*node_id).copied())
                .collect();
            Ok((result.candidates, core))
        });

    let mut candidate_dump = std::io::BufWriter::new(std::fs::File::create(
        cfg.workdir.join("candidates.jsonl"),
    )?);
    let mut profiles = Vec::with_capacity(corpus.len());
    for (doc, item) in corpus.iter().zip(per_doc) {
        let (candidates, core_topics) = item?;
        writeln!(
            candidate_dump,
            "{}",
            serde_json::json!({ "doc_id": doc.id, "candidates": candidates })
        )?;
        profiles.push(ConceptProfile::new(doc.id.clone(), core_topics, Vec::new()));
    }
    candidate_dump.flush()?;
    let mut profiles = ProfileSet::from_profiles(profiles)?;

    // pass 2: topical neighbors, distinctive phrase candidates, core phrases
    let index = Bm25Index::build(doc_texts.iter().map(String::as_str), cfg.bm25_params());
    let phrase_results: Vec<Result<(Vec<ScoredPhrase>, Vec<usize>)>> =
        map_collect(mode, corpus.documents(), |doc| {
            let neighbors = topic_neighbors(&profiles, &doc.id, cfg.params.neighbors)
                .map_err(Error::from)?;
            let neighbor_ords: Vec<usize> = neighbors
                .iter()
                .map(|id| corpus.ordinal(id).expect("neighbor from corpus"))
                .collect();
            let ordinal = corpus.ordinal(&doc.id).expect("doc from corpus");
            let scored = scored_phrases(&index, &vocab, &doc.text(), ordinal, &neighbor_ords)
                .map_err(Error::from)?;
            if scored.is_empty() {
                log::warn!("document {} matches no vocabulary phrases", doc.id);
                return Ok((scored, Vec::new()));
            }
            let keep = top_fraction_count(scored.len(), cfg.params.candidate_fraction);
            let candidates: Vec<String> =
                scored[..keep].iter().map(|s| s.phrase.clone()).collect();
            let picked = gateway
                .select_concepts(doc, &candidates, cfg.params.k_phrases, ConceptKind::Phrase)
                .map_err(Error::from)?;
            let core = picked.iter().filter_map(|p| vocab.ordinal(p)).collect();
            Ok((scored, core))
        });
    let mut dump = if dump_distinctiveness {
        Some(std::io::BufWriter::new(std::fs::File::create(
            cfg.workdir.join("distinctiveness.jsonl"),
        )?))
    } else {
        None
    };
    for (i, item) in phrase_results.into_iter().enumerate() {
        let (scored, core) = item?;
        if let Some(w) = dump.as_mut() {
            let doc_id = &corpus.at(i).id;
            for s in &scored {
                writeln!(
                    w,
                    "{}",
                    serde_json::json!({ "doc_id": doc_id, "phrase": s.phrase, "score": s.score })
                )?;
            }
        }
        profiles.profiles_mut()[i].core_phrases = {
            let mut v = core;
            v.sort_unstable();
            v.dedup();
            v
        };
    }
    if let Some(mut w) = dump {
        w.flush()?;
    }

    let (topics, _) = topic_space(&taxonomy);
    write_profiles(&cfg.workdir.join("concept_index.jsonl"), &profiles, &topics, &vocab)?;
    log::info!(
        "indexed {} documents ({} gateway calls)",
        corpus.len(),
        gateway.call_log().total()
    );
    Ok(())
}

/// Train the concept extractor on the core labels and persist it.
pub fn cmd_extractor_train(cfg: &PipelineConfig) -> Result<()> {
    let (_corpus, taxonomy, vocab) = load_inputs(cfg)?;
    let profiles = load_profile_set(cfg, &taxonomy, &vocab)?;
    let corpus_matrix = load_matrix(cfg, CORPUS_EMB_STEM, "index build")?;
    let (topics, _) = topic_space(&taxonomy);
    let (model, history) = ExtractorModel::train(
        &profiles,
        &corpus_matrix,
        topics.len(),
        vocab.len(),
        &cfg.extractor,
    )?;
    model.save(&cfg.workdir, EXTRACTOR_STEM, &cfg.extractor)?;
    std::fs::write(
        cfg.workdir.join("loss_history.json"),
        serde_json::to_string_pretty(&history).expect("history serializes"),
    )?;
    log::info!(
        "trained extractor: epoch loss {} -> {}",
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Fill the enriched distributions from the trained extractor.
pub fn cmd_index_enrich(cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    let (_corpus, taxonomy, vocab) = load_inputs(cfg)?;
    let mut profiles = load_profile_set(cfg, &taxonomy, &vocab)?;
    let corpus_matrix = load_matrix(cfg, CORPUS_EMB_STEM, "index build")?;
    let model = load_model(cfg)?;
    let enriched: Vec<Result<_>> = map_collect(mode, profiles.profiles(), |p| {
        let emb = corpus_matrix
            .row(&p.doc_id)
            .ok_or_else(|| missing(&format!("embedding for {}", p.doc_id), "index build"))?;
        Ok(model.enrich(emb, cfg.params.k_topics_enriched, cfg.params.k_phrases_enriched)?)
    });
    for (p, e) in profiles.profiles_mut().iter_mut().zip(enriched) {
        let (topics, phrases) = e?;
        p.enriched_topics = topics;
        p.enriched_phrases = phrases;
    }
    let (topics, _) = topic_space(&taxonomy);
    write_profiles(&cfg.workdir.join("concept_index.jsonl"), &profiles, &topics, &vocab)?;
    Ok(())
}

fn load_model(cfg: &PipelineConfig) -> Result<ExtractorModel> {
    if !cfg.workdir.join(format!("{EXTRACTOR_STEM}.manifest.json")).exists() {
        return Err(missing("extractor model", "extractor train"));
    }
    let (model, _) = ExtractorModel::load(&cfg.workdir, EXTRACTOR_STEM)?;
    Ok(model)
}

/// Generate the coverage-controlled query set for every document. Partial
/// results are written even when a document fails mid-set.
pub fn cmd_qgen_generate(cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    let (corpus, taxonomy, vocab) = load_inputs(cfg)?;
    let profiles = load_profile_set(cfg, &taxonomy, &vocab)?;
    let model = load_model(cfg)?;
    let embedder = make_embedder(cfg)?;
    let gateway = make_gateway(cfg)?;
    let template = PromptTemplate::default_for(cfg.params.scheme.template_kind());
    let params = QuerySetParams {
        queries_per_doc: cfg.params.queries_per_doc,
        k_topics_enriched: cfg.params.k_topics_enriched,
        k_phrases_enriched: cfg.params.k_phrases_enriched,
        epsilon: cfg.params.epsilon,
        seed: cfg.params.seed,
    };
    let per_doc: Vec<(Vec<GeneratedQuery>, Option<Error>)> =
        map_collect(mode, corpus.documents(), |doc| {
            let Some(profile) = profiles.get(&doc.id) else {
                return (Vec::new(), Some(missing(&format!("profile for {}", doc.id), "index build")));
            };
            let mut sink = Vec::new();
            let err = generate_query_set(
                doc, profile, &template, &gateway, &model, &embedder, &vocab, &params, &mut sink,
            )
            .err()
            .map(Error::from);
            (sink, err)
        });
    let mut queries = Vec::new();
    let mut first_err = None;
    for (sink, err) in per_doc {
        queries.extend(sink);
        if first_err.is_none() {
            first_err = err;
        }
    }
    write_queries(&cfg.workdir.join("queries.jsonl"), &queries)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Round-trip filter: annotate every generated query with kept/filter_score.
pub fn cmd_qgen_filter(cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    let (_corpus, taxonomy, vocab) = load_inputs(cfg)?;
    let profiles = load_profile_set(cfg, &taxonomy, &vocab)?;
    let corpus_matrix = load_matrix(cfg, CORPUS_EMB_STEM, "index build")?;
    let model = load_model(cfg)?;
    let embedder = make_embedder(cfg)?;
    let qpath = cfg.workdir.join("queries.jsonl");
    if !qpath.exists() {
        return Err(missing("queries.jsonl", "qgen generate"));
    }
    let mut queries = read_queries(&qpath)?;
    let filter = FilterConfig {
        top_n: cfg.params.filter_top_n,
        pool_size: cfg.params.filter_pool_size,
        top_fraction: cfg.params.concept_top_fraction,
    };
    filter_queries(
        &mut queries,
        &corpus_matrix,
        &profiles,
        &model,
        &embedder,
        &filter,
        cfg.params.k_topics_enriched,
        cfg.params.k_phrases_enriched,
        mode,
    )?;
    write_queries(&qpath, &queries)?;
    let kept = queries.iter().filter(|q| q.kept).count();
    log::info!("filter kept {kept}/{} queries", queries.len());
    Ok(())
}

/// Export contrastive training pairs for the kept queries.
pub fn cmd_qgen_export_pairs(cfg: &PipelineConfig) -> Result<()> {
    let qpath = cfg.workdir.join("queries.jsonl");
    if !qpath.exists() {
        return Err(missing("queries.jsonl", "qgen generate"));
    }
    let queries = read_queries(&qpath)?;
    let n = export_training_pairs(&queries, &cfg.workdir.join("pairs.jsonl"))?;
    log::info!("exported {n} training pairs");
    Ok(())
}

/// Generate, embed, and index one snippet per (document, query). All LLM
/// work happens here; search never calls the gateway for snippet variants.
pub fn cmd_expand_snippets(cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    let (corpus, _taxonomy, _vocab) = load_inputs(cfg)?;
    let qpath = cfg.workdir.join("queries.jsonl");
    if !qpath.exists() {
        return Err(missing("queries.jsonl", "qgen generate"));
    }
    let queries = read_queries(&qpath)?;
    let gateway = make_gateway(cfg)?;
    let embedder = make_embedder(cfg)?;

    let mut by_doc: HashMap<&str, Vec<&GeneratedQuery>> = HashMap::new();
    for q in &queries {
        by_doc.entry(q.doc_id.as_str()).or_default().push(q);
    }
    let docs_with_queries: Vec<_> = corpus
        .iter()
        .filter(|d| by_doc.contains_key(d.id.as_str()))
        .collect();
    let per_doc: Vec<(Vec<Snippet>, Option<Error>)> =
        map_collect(mode, &docs_with_queries, |doc| {
            let mut doc_queries = by_doc[doc.id.as_str()].clone();
            doc_queries.sort_by_key(|q| q.seq);
            let mut sink = Vec::new();
            let err = build_snippets(doc, &doc_queries, &gateway, &mut sink)
                .err()
                .map(Error::from);
            (sink, err)
        });
    let mut snippets = Vec::new();
    let mut first_err = None;
    for (sink, err) in per_doc {
        snippets.extend(sink);
        if first_err.is_none() {
            first_err = err;
        }
    }
    write_snippets(&cfg.workdir.join("snippets.jsonl"), &snippets)?;
    let ids: Vec<String> = snippets.iter().map(|s| s.embedding_id()).collect();
    let texts: Vec<String> = snippets.iter().map(|s| s.text.clone()).collect();
    if !ids.is_empty() {
        let matrix = embedder.embed_matrix(&ids, &texts)?;
        matrix.save(&cfg.workdir, SNIPPET_EMB_STEM)?;
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// One evaluation query from the eval_queries JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub text: String,
}

pub fn read_eval_queries(path: &Path) -> Result<Vec<EvalQuery>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: EvalQuery = serde_json::from_str(&line)
            .map_err(|e| Error::Pipeline(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(q);
    }
    Ok(out)
}

fn eval_queries(cfg: &PipelineConfig) -> Result<Vec<EvalQuery>> {
    let path = cfg
        .eval_queries
        .as_ref()
        .ok_or_else(|| Error::Pipeline("config has no eval_queries path".into()))?;
    read_eval_queries(path)
}

/// Base dense run over the evaluation queries.
pub fn cmd_search(cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    let corpus_matrix = load_matrix(cfg, CORPUS_EMB_STEM, "index build")?;
    let embedder = make_embedder(cfg)?;
    let queries = eval_queries(cfg)?;
    let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
    let embs = embedder.embed_batch(&texts)?;
    let items: Vec<(usize, &EvalQuery)> = queries.iter().enumerate().collect();
    let runs: Vec<Result<RankedList>> = map_collect(mode, &items, |(i, q)| {
        Ok(dense_search(
            &q.query_id,
            &embs[*i],
            &corpus_matrix,
            cfg.params.search_depth,
            cfg.metric(),
        )?)
    });
    let runs: Vec<RankedList> = runs.into_iter().collect::<Result<_>>()?;
    write_run(&cfg.workdir.join("run.base.txt"), &runs, "base")?;
    Ok(())
}

fn load_snippet_index(cfg: &PipelineConfig) -> Result<SnippetIndex> {
    let spath = cfg.workdir.join("snippets.jsonl");
    if !spath.exists() {
        return Err(missing("snippets.jsonl", "expand snippets"));
    }
    let snippets = read_snippets(&spath)?;
    let matrix = load_matrix(cfg, SNIPPET_EMB_STEM, "expand snippets")?;
    Ok(SnippetIndex::from_parts(snippets, matrix)?)
}

/// Rescore the base run with the selected variant, writing
/// `run.rescored.txt`.
pub fn cmd_rescore(cfg: &PipelineConfig, variant: RescoreVariant, mode: ExecMode) -> Result<()> {
    let queries = eval_queries(cfg)?;
    let embedder = make_embedder(cfg)?;
    let rcfg = RescoreConfig {
        alpha: cfg.params.alpha,
        top_k: cfg.params.rescore_top_k,
        variant,
        hyde_n: cfg.params.hyde_n,
    };
    let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
    let embs = embedder.embed_batch(&texts)?;
    let tag;
    let rescored: Vec<RankedList> = match variant {
        RescoreVariant::None => {
            tag = "cc-none";
            load_base_run(cfg)?
        }
        RescoreVariant::SnippetMax | RescoreVariant::SnippetAverage => {
            tag = match variant {
                RescoreVariant::SnippetMax => "cc-max",
                _ => "cc-average",
            };
            let base = load_base_run(cfg)?;
            let index = load_snippet_index(cfg)?;
            let items: Vec<(usize, &RankedList)> = base.iter().enumerate().collect();
            map_collect(mode, &items, |(i, run)| match variant {
                RescoreVariant::SnippetMax => {
                    rescore_with_snippets(&embs[*i], run, &index, &rcfg, cfg.metric())
                        .map_err(Error::from)
                }
                _ => rescore_average(&embs[*i], run, &index, &rcfg, cfg.metric())
                    .map_err(Error::from),
            })
            .into_iter()
            .collect::<Result<_>>()?
        }
        RescoreVariant::ConceptMatch => {
            tag = "cc-concept";
            let (_corpus, taxonomy, vocab) = load_inputs(cfg)?;
            let profiles = load_profile_set(cfg, &taxonomy, &vocab)?;
            let model = load_model(cfg)?;
            let base = load_base_run(cfg)?;
            let items: Vec<(usize, &RankedList)> = base.iter().enumerate().collect();
            map_collect(mode, &items, |(i, run)| {
                rescore_concept_match(
                    &queries[*i].text,
                    run,
                    &profiles,
                    &model,
                    &embedder,
                    &rcfg,
                    cfg.params.concept_top_fraction,
                    cfg.params.k_topics_enriched,
                    cfg.params.k_phrases_enriched,
                )
                .map_err(Error::from)
            })
            .into_iter()
            .collect::<Result<_>>()?
        }
        RescoreVariant::Hyde => {
            tag = "cc-hyde";
            let corpus_matrix = load_matrix(cfg, CORPUS_EMB_STEM, "index build")?;
            let gateway = make_gateway(cfg)?;
            let items: Vec<(usize, &EvalQuery)> = queries.iter().enumerate().collect();
            map_collect(mode, &items, |(i, q)| {
                crate::expand::hyde_expand(
                    &q.query_id,
                    &q.text,
                    &embs[*i],
                    &gateway,
                    &embedder,
                    rcfg.hyde_n,
                    &corpus_matrix,
                    cfg.params.search_depth,
                    cfg.metric(),
                )
                .map_err(Error::from)
            })
            .into_iter()
            .collect::<Result<_>>()?
        }
    };
    write_run(&cfg.workdir.join("run.rescored.txt"), &rescored, tag)?;
    Ok(())
}

fn load_base_run(cfg: &PipelineConfig) -> Result<Vec<RankedList>> {
    let path = cfg.workdir.join("run.base.txt");
    if !path.exists() {
        return Err(missing("run.base.txt", "search"));
    }
    Ok(read_run(&path)?.0)
}

/// Evaluate a run file against the configured qrels, writing metrics.json.
pub fn cmd_eval(cfg: &PipelineConfig, run_path: Option<&Path>) -> Result<()> {
    let default_path = cfg.workdir.join("run.base.txt");
    let path = run_path.unwrap_or(&default_path);
    if !path.exists() {
        return Err(missing(&path.display().to_string(), "search"));
    }
    let (runs, _) = read_run(path)?;
    let qrels_path = cfg
        .qrels
        .as_ref()
        .ok_or_else(|| Error::Pipeline("config has no qrels path".into()))?;
    let qrels = read_qrels(qrels_path)?;
    let report = compute_metrics(&runs, &qrels, &cfg.params.eval_ks, cfg.params.ndcg_gain)?;
    std::fs::write(
        cfg.workdir.join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    for (name, value) in &report.mean {
        log::info!("{name}: {value:.4}");
    }
    Ok(())
}

/// Per-document and corpus-level query-set statistics.
#[derive(Debug, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_doc: BTreeMap<String, crate::eval::QueryStats>,
    pub mean_redundancy: Option<f64>,
    pub mean_lexical_overlap: f64,
}

pub fn cmd_stats(cfg: &PipelineConfig) -> Result<()> {
    let (corpus, _taxonomy, _vocab) = load_inputs(cfg)?;
    let qpath = cfg.workdir.join("queries.jsonl");
    if !qpath.exists() {
        return Err(missing("queries.jsonl", "qgen generate"));
    }
    let queries = read_queries(&qpath)?;
    let texts: Vec<String> = corpus.iter().map(|d| d.text()).collect();
    let index = Bm25Index::build(texts.iter().map(String::as_str), cfg.bm25_params());
    let mut by_doc: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for q in &queries {
        by_doc.entry(q.doc_id.clone()).or_default().push(q.text.clone());
    }
    let mut per_doc = BTreeMap::new();
    let mut red_sum = 0.0;
    let mut red_n = 0usize;
    let mut overlap_sum = 0.0;
    for (doc_id, doc_queries) in &by_doc {
        let ordinal = corpus
            .ordinal(doc_id)
            .ok_or_else(|| Error::Pipeline(format!("query for unknown document \"{doc_id}\"")))?;
        let stats = query_set_stats(doc_queries, ordinal, &index)?;
        if let Some(r) = stats.redundancy {
            red_sum += r;
            red_n += 1;
        }
        overlap_sum += stats.lexical_overlap;
        per_doc.insert(doc_id.clone(), stats);
    }
    let report = StatsReport {
        mean_redundancy: (red_n > 0).then(|| red_sum / red_n as f64),
        mean_lexical_overlap: if per_doc.is_empty() {
            0.0
        } else {
            overlap_sum / per_doc.len() as f64
        },
        per_doc,
    };
    std::fs::write(
        cfg.workdir.join("stats.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(())
}

/// Wall-clock latency per stage over the evaluation query set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub stages: BTreeMap<String, LatencyStats>,
}

/// Time the query path stage by stage and verify the offline contract:
/// zero gateway calls for base search and the snippet/concept rescore
/// variants, exactly `hyde_n` calls per query for the hyde variant.
pub fn cmd_bench(cfg: &PipelineConfig, variant: RescoreVariant, mode: ExecMode) -> Result<LatencyReport> {
    let _ = mode; // per-query timings are measured sequentially
    let corpus_matrix = load_matrix(cfg, CORPUS_EMB_STEM, "index build")?;
    let embedder = make_embedder(cfg)?;
    let gateway = make_gateway(cfg)?;
    let queries = eval_queries(cfg)?;
    let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();

    let mut stages = BTreeMap::new();

    let calls_before = gateway.call_log().total();
    let t = Instant::now();
    let embs = embedder.embed_batch(&texts)?;
    let embed_ms = t.elapsed().as_secs_f64() * 1e3;
    stages.insert(
        "embed_queries".to_string(),
        latency_stats(&[embed_ms], gateway.call_log().total() - calls_before),
    );

    let mut search_samples = Vec::with_capacity(queries.len());
    let mut base_runs = Vec::with_capacity(queries.len());
    let calls_before = gateway.call_log().total();
    for (i, q) in queries.iter().enumerate() {
        let t = Instant::now();
        let run = dense_search(
            &q.query_id,
            &embs[i],
            &corpus_matrix,
            cfg.params.search_depth,
            cfg.metric(),
        )?;
        search_samples.push(t.elapsed().as_secs_f64() * 1e3);
        base_runs.push(run);
    }
    let search_calls = gateway.call_log().total() - calls_before;
    stages.insert("search".to_string(), latency_stats(&search_samples, search_calls));
    if search_calls != 0 {
        return Err(Error::Pipeline(format!(
            "base search issued {search_calls} gateway calls; expected 0"
        )));
    }

    let rcfg = RescoreConfig {
        alpha: cfg.params.alpha,
        top_k: cfg.params.rescore_top_k,
        variant,
        hyde_n: cfg.params.hyde_n,
    };
    let stage_name = format!("rescore_{}", match variant {
        RescoreVariant::SnippetMax => "max",
        RescoreVariant::SnippetAverage => "average",
        RescoreVariant::ConceptMatch => "concept",
        RescoreVariant::Hyde => "hyde",
        RescoreVariant::None => "none",
    });
    let mut rescore_samples = Vec::with_capacity(queries.len());
    let calls_before = gateway.call_log().total();
    match variant {
        RescoreVariant::SnippetMax | RescoreVariant::SnippetAverage => {
            let index = load_snippet_index(cfg)?;
            for (i, run) in base_runs.iter().enumerate() {
                let t = Instant::now();
                match variant {
                    RescoreVariant::SnippetMax => {
                        rescore_with_snippets(&embs[i], run, &index, &rcfg, cfg.metric())?;
                    }
                    _ => {
                        rescore_average(&embs[i], run, &index, &rcfg, cfg.metric())?;
                    }
                }
                rescore_samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
        RescoreVariant::ConceptMatch => {
            let (_corpus, taxonomy, vocab) = load_inputs(cfg)?;
            let profiles = load_profile_set(cfg, &taxonomy, &vocab)?;
            let model = load_model(cfg)?;
            for (i, run) in base_runs.iter().enumerate() {
                let t = Instant::now();
                rescore_concept_match(
                    &queries[i].text,
                    run,
                    &profiles,
                    &model,
                    &embedder,
                    &rcfg,
                    cfg.params.concept_top_fraction,
                    cfg.params.k_topics_enriched,
                    cfg.params.k_phrases_enriched,
                )?;
                rescore_samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
        RescoreVariant::Hyde => {
            for (i, q) in queries.iter().enumerate() {
                let t = Instant::now();
                crate::expand::hyde_expand(
                    &q.query_id,
                    &q.text,
                    &embs[i],
                    &gateway,
                    &embedder,
                    rcfg.hyde_n,
                    &corpus_matrix,
                    cfg.params.search_depth,
                    cfg.metric(),
                )?;
                rescore_samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
        RescoreVariant::None => {}
    }
    let rescore_calls = gateway.call_log().total() - calls_before;
    if variant != RescoreVariant::None {
        stages.insert(stage_name, latency_stats(&rescore_samples, rescore_calls));
    }
    match variant {
        RescoreVariant::SnippetMax | RescoreVariant::SnippetAverage | RescoreVariant::ConceptMatch => {
            if rescore_calls != 0 {
                return Err(Error::Pipeline(format!(
                    "offline rescore variant issued {rescore_calls} gateway calls; expected 0"
                )));
            }
        }
        RescoreVariant::Hyde => {
            let expected = (cfg.params.hyde_n * queries.len()) as u64;
            if rescore_calls != expected {
                return Err(Error::Pipeline(format!(
                    "hyde issued {rescore_calls} gateway calls; expected {expected}"
                )));
            }
        }
        RescoreVariant::None => {}
    }

    let report = LatencyReport { stages };
    std::fs::write(
        cfg.workdir.join("bench.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

/// Workdir path helper used by tests and the CLI.
pub fn artifact(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.workdir.join(name)
}
