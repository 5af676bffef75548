//! Tokenization, BM25 scoring over an inverted index, topical neighbor
//! retrieval, and phrase distinctiveness / candidate selection.

use crate::profile::ProfileSet;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("document ordinal {0} out of range (corpus size {1})")]
    UnknownDoc(usize, usize),
    #[error("phrase \"{0}\" is not in the vocabulary")]
    UnknownPhrase(String),
    #[error("no profile for document \"{0}\"")]
    MissingProfile(String),
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Sparse term-frequency vector; zero-count terms are absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TfVector {
    counts: BTreeMap<String, u64>,
}

impl TfVector {
    pub fn from_text(text: &str) -> Self {
        let mut counts = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Cosine similarity of two count vectors; 0 if either is empty.
    pub fn cosine(&self, other: &Self) -> f64 {
        let mut dot = 0.0f64;
        for (term, &c) in &self.counts {
            if let Some(&d) = other.counts.get(term) {
                dot += c as f64 * d as f64;
            }
        }
        let na: f64 = self.counts.values().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = other.counts.values().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Okapi BM25 parameters. The defaults follow common evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Inverted index with per-document lengths for BM25 scoring.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
    params: Bm25Params,
}

impl Bm25Index {
    /// Build from canonical document texts, ordinals following input order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, params: Bm25Params) -> Self {
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::new();
        for (d, text) in texts.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((d as u32, count));
            }
        }
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64
        };
        Self {
            postings,
            doc_len,
            avgdl,
            params,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map(Vec::len).unwrap_or(0)
    }

    fn tf(&self, term: &str, doc: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| list.binary_search_by_key(&doc, |&(d, _)| d).ok().map(|i| list[i].1))
            .unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, nonnegative for any df <= N.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of a tokenized query against one document. Additive over
    /// query terms; absent terms contribute 0.
    pub fn score(&self, query_terms: &[String], doc: usize) -> Result<f64, LexicalError> {
        if doc >= self.doc_len.len() {
            return Err(LexicalError::UnknownDoc(doc, self.doc_len.len()));
        }
        let len = self.doc_len[doc] as f64;
        let Bm25Params { k1, b } = self.params;
        let mut score = 0.0;
        for term in query_terms {
            let tf = self.tf(term, doc as u32) as f64;
            if tf == 0.0 {
                continue;
            }
            let norm = tf + k1 * (1.0 - b + b * len / self.avgdl);
            score += self.idf(term) * tf * (k1 + 1.0) / norm;
        }
        Ok(score)
    }
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    // both sorted ascending
    let (mut i, mut j, mut inter) = (0usize, 0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Top-`n` other documents by Jaccard similarity of core-topic sets, ties by
/// ascending doc id. A document with no core topics gets no neighbors.
pub fn topic_neighbors(profiles: &ProfileSet, doc_id: &str, n: usize) -> Result<Vec<String>, LexicalError> {
    let me = profiles
        .get(doc_id)
        .ok_or_else(|| LexicalError::MissingProfile(doc_id.to_string()))?;
    if me.core_topics.is_empty() {
        log::warn!("document {doc_id} has no core topics; returning empty neighbor list");
        return Ok(Vec::new());
    }
    let mut scored: Vec<(f64, &str)> = profiles
        .iter()
        .filter(|p| p.doc_id != doc_id)
        .map(|p| (jaccard(&me.core_topics, &p.core_topics), p.doc_id.as_str()))
        .collect();
    scored.sort_by(|(sa, ida), (sb, idb)| {
        sb.partial_cmp(sa).unwrap_or(std::cmp::Ordering::Equal).then_with(|| ida.cmp(idb))
    });
    Ok(scored.into_iter().take(n).map(|(_, id)| id.to_string()).collect())
}

/// Distinctiveness of a phrase for a document against its topical neighbors:
/// `exp(BM25(p, d)) / (1 + sum_{d'} exp(BM25(p, d')))`, evaluated in a
/// shifted form so large scores cannot overflow.
pub fn phrase_distinctiveness(
    index: &Bm25Index,
    phrase_terms: &[String],
    doc: usize,
    neighbors: &[usize],
) -> Result<f64, LexicalError> {
    let s_d = index.score(phrase_terms, doc)?;
    let mut neighbor_scores = Vec::with_capacity(neighbors.len());
    for &d in neighbors {
        neighbor_scores.push(index.score(phrase_terms, d)?);
    }
    // shift by m = max(0, s_d, max s_d'); the bare 1 in the denominator is exp(0)
    let mut m = s_d.max(0.0);
    for &s in &neighbor_scores {
        m = m.max(s);
    }
    let num = (s_d - m).exp();
    let den = (-m).exp() + neighbor_scores.iter().map(|&s| (s - m).exp()).sum::<f64>();
    Ok(num / den)
}

/// A phrase with its distinctiveness score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPhrase {
    pub phrase: String,
    pub score: f64,
}

/// All vocabulary phrases contained in the document (token-multiset
/// containment), scored by distinctiveness and sorted descending with
/// lexicographic tie-break.
pub fn scored_phrases(
    index: &Bm25Index,
    vocab: &crate::corpus::PhraseVocab,
    doc_text: &str,
    doc: usize,
    neighbors: &[usize],
) -> Result<Vec<ScoredPhrase>, LexicalError> {
    let mut doc_counts: HashMap<String, u32> = HashMap::new();
    for t in tokenize(doc_text) {
        *doc_counts.entry(t).or_insert(0) += 1;
    }
    let mut out = Vec::new();
    for phrase in vocab.phrases() {
        let terms = tokenize(phrase);
        if terms.is_empty() {
            continue;
        }
        let mut need: HashMap<&str, u32> = HashMap::new();
        for t in &terms {
            *need.entry(t.as_str()).or_insert(0) += 1;
        }
        let contained = need
            .iter()
            .all(|(t, &c)| doc_counts.get(*t).copied().unwrap_or(0) >= c);
        if !contained {
            continue;
        }
        let score = phrase_distinctiveness(index, &terms, doc, neighbors)?;
        out.push(ScoredPhrase {
            phrase: phrase.clone(),
            score,
        });
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.phrase.cmp(&b.phrase))
    });
    Ok(out)
}

/// Number of candidates kept from `n` matches at the given top fraction
/// (ceiling, so a document with any match keeps at least one).
pub fn top_fraction_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).ceil() as usize
}

/// Candidate phrases for a document: the top fraction of its scored phrases.
pub fn candidate_phrases(
    index: &Bm25Index,
    vocab: &crate::corpus::PhraseVocab,
    doc_text: &str,
    doc: usize,
    neighbors: &[usize],
    fraction: f64,
) -> Result<Vec<String>, LexicalError> {
    let scored = scored_phrases(index, vocab, doc_text, doc, neighbors)?;
    if scored.is_empty() {
        log::warn!("document ordinal {doc} matches no vocabulary phrases");
        return Ok(Vec::new());
    }
    let keep = top_fraction_count(scored.len(), fraction);
    Ok(scored.into_iter().take(keep).map(|s| s.phrase).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhraseVocab;
    use crate::profile::{ConceptProfile, ProfileSet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Cold-Start Problem!"), vec!["cold", "start", "problem"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("a  b"), vec!["a", "b"]);
    }

    #[test]
    fn bm25_hand_value() {
        // 1-doc corpus "a a b", query ["a"]: tf=2, len=3=avgdl, idf=ln(4/3),
        // score = ln(4/3) * 2 * 1.9 / (2 + 0.9)
        let index = Bm25Index::build(["a a b"], Bm25Params::default());
        let score = index.score(&[String::from("a")], 0).unwrap();
        let expect = (4.0f64 / 3.0).ln() * 2.0 * 1.9 / 2.9;
        assert_abs_diff_eq!(score, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(score, 0.3769627156, epsilon = 1e-9);
    }

    #[test]
    fn bm25_absent_terms_contribute_zero() {
        let index = Bm25Index::build(["a a b", "c d"], Bm25Params::default());
        assert_eq!(index.score(&[String::from("z")], 0).unwrap(), 0.0);
        let single = index.score(&[String::from("a")], 0).unwrap();
        let double = index
            .score(&[String::from("a"), String::from("a")], 0)
            .unwrap();
        assert_abs_diff_eq!(double, 2.0 * single, epsilon = 1e-12);
    }

    #[test]
    fn bm25_unknown_doc_errors() {
        let index = Bm25Index::build(["a"], Bm25Params::default());
        assert!(matches!(
            index.score(&[String::from("a")], 3),
            Err(LexicalError::UnknownDoc(3, 1))
        ));
    }

    #[test]
    fn idf_is_nonnegative() {
        use rand::Rng;
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        use rand::SeedableRng;
        for _ in 0..10_000 {
            let n: u64 = rng.gen_range(1..10_000);
            let df: u64 = rng.gen_range(0..=n);
            let idf = (1.0 + (n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln();
            assert!(idf >= 0.0, "idf({df},{n}) = {idf}");
        }
    }

    fn profile(id: &str, topics: &[usize]) -> ConceptProfile {
        ConceptProfile {
            doc_id: id.to_string(),
            core_topics: topics.to_vec(),
            core_phrases: vec![],
            enriched_topics: vec![],
            enriched_phrases: vec![],
        }
    }

    #[test]
    fn topic_neighbors_orders_by_jaccard_then_id() {
        let set = ProfileSet::from_profiles(vec![
            profile("q", &[1, 2]),
            profile("same", &[1, 2]),
            profile("partial", &[2, 3]),
            profile("disjoint", &[7, 8]),
        ])
        .unwrap();
        let neighbors = topic_neighbors(&set, "q", 10).unwrap();
        assert_eq!(neighbors, vec!["same", "partial", "disjoint"]);
        // Jaccard({1,2},{2,3}) = 1/3
        assert_abs_diff_eq!(jaccard(&[1, 2], &[2, 3]), 1.0 / 3.0, epsilon = 1e-15);
        let top1 = topic_neighbors(&set, "q", 1).unwrap();
        assert_eq!(top1, vec!["same"]);
    }

    #[test]
    fn topic_neighbors_empty_topics_warns_empty() {
        let set = ProfileSet::from_profiles(vec![profile("q", &[]), profile("o", &[1])]).unwrap();
        assert!(topic_neighbors(&set, "q", 5).unwrap().is_empty());
    }

    #[test]
    fn distinctiveness_edge_cases() {
        let index = Bm25Index::build(["x y", "x z", "y z"], Bm25Params::default());
        // phrase absent everywhere with two neighbors: exp(0)/(1+2) = 1/3
        let terms = vec![String::from("absent")];
        let d = phrase_distinctiveness(&index, &terms, 0, &[1, 2]).unwrap();
        assert_abs_diff_eq!(d, 1.0 / 3.0, epsilon = 1e-12);
        // no neighbors and BM25 = 0: exp(0)/(1+0) = 1.0
        let d = phrase_distinctiveness(&index, &terms, 0, &[]).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distinctiveness_increases_with_doc_score() {
        // fixing neighbors, documents with higher tf for the phrase score higher
        let index = Bm25Index::build(
            ["q q q q filler", "q filler pad pad", "other text here"],
            Bm25Params::default(),
        );
        let terms = vec![String::from("q")];
        let hi = phrase_distinctiveness(&index, &terms, 0, &[2]).unwrap();
        let lo = phrase_distinctiveness(&index, &terms, 1, &[2]).unwrap();
        assert!(hi > lo, "{hi} vs {lo}");
        assert!(hi > 0.0);
    }

    #[test]
    fn stable_distinctiveness_matches_naive_form() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let s_d: f64 = rng.gen_range(0.0..20.0);
            let neigh: Vec<f64> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(0.0..20.0)).collect();
            let naive = s_d.exp() / (1.0 + neigh.iter().map(|s| s.exp()).sum::<f64>());
            let mut m = s_d.max(0.0);
            for &s in &neigh {
                m = m.max(s);
            }
            let stable =
                (s_d - m).exp() / ((-m).exp() + neigh.iter().map(|&s| (s - m).exp()).sum::<f64>());
            approx::assert_relative_eq!(naive, stable, max_relative = 1e-9);
            assert!(stable > 0.0);
        }
    }

    #[test]
    fn stable_form_survives_scores_that_overflow_naive_exp() {
        // naive exp(s) is infinite at s ~ 710; the shifted form stays finite
        let s_d = 800.0f64;
        let neigh = [750.0f64, 700.0];
        let mut m = s_d.max(0.0);
        for &s in &neigh {
            m = m.max(s);
        }
        let stable =
            (s_d - m).exp() / ((-m).exp() + neigh.iter().map(|&s| (s - m).exp()).sum::<f64>());
        assert!(stable.is_finite() && stable > 0.0, "{stable}");
    }

    #[test]
    fn candidate_counts_use_ceiling() {
        assert_eq!(top_fraction_count(10, 0.2), 2);
        assert_eq!(top_fraction_count(1, 0.2), 1);
        assert_eq!(top_fraction_count(0, 0.2), 0);
    }

    #[test]
    fn candidate_phrases_rank_and_truncate() {
        let texts = [
            "neural ranking with sparse attention and neural ranking tricks",
            "sparse attention for vision",
            "graph methods",
        ];
        let index = Bm25Index::build(texts.iter().copied(), Bm25Params::default());
        let vocab = PhraseVocab::from_phrases(
            [
                "neural ranking",
                "sparse attention",
                "graph methods",
                "missing phrase",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        // doc 0 matches "neural ranking" and "sparse attention": keep ceil(0.2*2)=1
        let cands = candidate_phrases(&index, &vocab, texts[0], 0, &[1, 2], 0.2).unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0], "neural ranking");
        // no matches: empty
        let cands = candidate_phrases(&index, &vocab, "nothing relevant", 2, &[0], 0.2).unwrap();
        assert!(cands.is_empty());
    }

    #[test]
    fn tf_vector_cosine() {
        let a = TfVector::from_text("alpha beta alpha");
        let b = TfVector::from_text("alpha beta alpha");
        assert_abs_diff_eq!(a.cosine(&b), 1.0, epsilon = 1e-12);
        let c = TfVector::from_text("gamma delta");
        assert_eq!(a.cosine(&c), 0.0);
        assert_eq!(TfVector::from_text("").cosine(&a), 0.0);
    }
}
