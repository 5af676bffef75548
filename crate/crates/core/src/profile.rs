//! Per-document concept records: core topics/phrases plus enriched sparse
//! importance distributions, with JSONL import/export.

use crate::corpus::PhraseVocab;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("duplicate profile for document \"{0}\"")]
    Duplicate(String),
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("profile for \"{doc}\": unknown {kind} id \"{id}\"")]
    UnknownConcept {
        doc: String,
        kind: &'static str,
        id: String,
    },
    #[error("profile for \"{doc}\": enriched {kind} distribution sums to {sum}, expected 1")]
    NotNormalized { doc: String, kind: &'static str, sum: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse probability vector: (ordinal, probability) sorted by ordinal with
/// strictly positive entries.
pub type SparseVec = Vec<(usize, f64)>;

/// Sum of a sparse vector's probabilities.
pub fn sparse_sum(v: &SparseVec) -> f64 {
    v.iter().map(|&(_, p)| p).sum()
}

/// Value at an ordinal, 0 when off-support.
pub fn sparse_get(v: &SparseVec, ordinal: usize) -> f64 {
    v.binary_search_by_key(&ordinal, |&(i, _)| i)
        .map(|pos| v[pos].1)
        .unwrap_or(0.0)
}

/// Concept record for one document. Core sets are binary labels stored as
/// sorted ordinals into the topic / phrase spaces; enriched distributions
/// are sparse probability vectors over the same spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptProfile {
    pub doc_id: String,
    pub core_topics: Vec<usize>,
    pub core_phrases: Vec<usize>,
    pub enriched_topics: SparseVec,
    pub enriched_phrases: SparseVec,
}

impl ConceptProfile {
    pub fn new(doc_id: String, mut core_topics: Vec<usize>, mut core_phrases: Vec<usize>) -> Self {
        core_topics.sort_unstable();
        core_topics.dedup();
        core_phrases.sort_unstable();
        core_phrases.dedup();
        Self {
            doc_id,
            core_topics,
            core_phrases,
            enriched_topics: Vec::new(),
            enriched_phrases: Vec::new(),
        }
    }

    pub fn is_enriched(&self) -> bool {
        !self.enriched_topics.is_empty() || !self.enriched_phrases.is_empty()
    }
}

/// An ordered profile collection with id lookup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet {
    profiles: Vec<ConceptProfile>,
    index: HashMap<String, usize>,
}

impl ProfileSet {
    pub fn from_profiles(profiles: Vec<ConceptProfile>) -> Result<Self, ProfileError> {
        let mut index = HashMap::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            if index.insert(p.doc_id.clone(), i).is_some() {
                return Err(ProfileError::Duplicate(p.doc_id.clone()));
            }
        }
        Ok(Self { profiles, index })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&ConceptProfile> {
        self.index.get(doc_id).map(|&i| &self.profiles[i])
    }

    pub fn at(&self, i: usize) -> &ConceptProfile {
        &self.profiles[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConceptProfile> {
        self.profiles.iter()
    }

    pub fn profiles(&self) -> &[ConceptProfile] {
        &self.profiles
    }

    pub fn profiles_mut(&mut self) -> &mut [ConceptProfile] {
        &mut self.profiles
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileRecord {
    doc_id: String,
    core_topics: Vec<String>,
    core_phrases: Vec<String>,
    enriched_topics: Vec<(String, f64)>,
    enriched_phrases: Vec<(String, f64)>,
}

/// Write profiles as JSONL with string concept ids (taxonomy node ids and
/// phrase strings), one document per line in set order.
pub fn write_profiles(
    path: &Path,
    set: &ProfileSet,
    topic_ids: &[String],
    vocab: &PhraseVocab,
) -> Result<(), ProfileError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in set.iter() {
        let rec = ProfileRecord {
            doc_id: p.doc_id.clone(),
            core_topics: p.core_topics.iter().map(|&i| topic_ids[i].clone()).collect(),
            core_phrases: p
                .core_phrases
                .iter()
                .map(|&j| vocab.phrase(j).to_string())
                .collect(),
            enriched_topics: p
                .enriched_topics
                .iter()
                .map(|&(i, v)| (topic_ids[i].clone(), v))
                .collect(),
            enriched_phrases: p
                .enriched_phrases
                .iter()
                .map(|&(j, v)| (vocab.phrase(j).to_string(), v))
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| ProfileError::Schema {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a profile JSONL file back into ordinal space, validating enriched
/// distributions sum to 1 within 1e-9.
pub fn read_profiles(
    path: &Path,
    topic_index: &HashMap<String, usize>,
    vocab: &PhraseVocab,
) -> Result<ProfileSet, ProfileError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut profiles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProfileRecord = serde_json::from_str(&line).map_err(|e| ProfileError::Schema {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let topic_ord = |id: &str| {
            topic_index
                .get(id)
                .copied()
                .ok_or_else(|| ProfileError::UnknownConcept {
                    doc: rec.doc_id.clone(),
                    kind: "topic",
                    id: id.to_string(),
                })
        };
        let phrase_ord = |s: &str| {
            vocab.ordinal(s).ok_or_else(|| ProfileError::UnknownConcept {
                doc: rec.doc_id.clone(),
                kind: "phrase",
                id: s.to_string(),
            })
        };
        let core_topics = rec.core_topics.iter().map(|t| topic_ord(t)).collect::<Result<_, _>>()?;
        let core_phrases = rec.core_phrases.iter().map(|s| phrase_ord(s)).collect::<Result<_, _>>()?;
        let mut enriched_topics: SparseVec = rec
            .enriched_topics
            .iter()
            .map(|(t, v)| topic_ord(t).map(|i| (i, *v)))
            .collect::<Result<_, _>>()?;
        let mut enriched_phrases: SparseVec = rec
            .enriched_phrases
            .iter()
            .map(|(s, v)| phrase_ord(s).map(|j| (j, *v)))
            .collect::<Result<_, _>>()?;
        enriched_topics.sort_by_key(|&(i, _)| i);
        enriched_phrases.sort_by_key(|&(j, _)| j);
        for (kind, v) in [("topic", &enriched_topics), ("phrase", &enriched_phrases)] {
            if !v.is_empty() {
                let sum = sparse_sum(v);
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(ProfileError::NotNormalized {
                        doc: rec.doc_id.clone(),
                        kind: if kind == "topic" { "topic" } else { "phrase" },
                        sum,
                    });
                }
            }
        }
        let mut p = ConceptProfile::new(rec.doc_id, core_topics, core_phrases);
        p.enriched_topics = enriched_topics;
        p.enriched_phrases = enriched_phrases;
        profiles.push(p);
    }
    ProfileSet::from_profiles(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_roundtrip_through_jsonl() {
        let vocab = PhraseVocab::from_phrases(
            ["alpha beta", "gamma delta", "epsilon"].iter().map(|s| s.to_string()),
        );
        let topics = vec!["t0".to_string(), "t1".to_string(), "t2".to_string()];
        let topic_index: HashMap<String, usize> = topics
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let mut p = ConceptProfile::new("d1".into(), vec![2, 0], vec![1]);
        p.enriched_topics = vec![(0, 0.25), (2, 0.75)];
        p.enriched_phrases = vec![(0, 0.5), (1, 0.5)];
        let set = ProfileSet::from_profiles(vec![p]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concept_index.jsonl");
        write_profiles(&path, &set, &topics, &vocab).unwrap();
        let back = read_profiles(&path, &topic_index, &vocab).unwrap();
        assert_eq!(back, set);
        // core sets are stored sorted
        assert_eq!(back.get("d1").unwrap().core_topics, vec![0, 2]);
    }

    #[test]
    fn read_rejects_unnormalized_distribution() {
        let vocab = PhraseVocab::from_phrases(["p"].iter().map(|s| s.to_string()));
        let topic_index: HashMap<String, usize> = [("t".to_string(), 0)].into_iter().collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"doc_id\":\"d\",\"core_topics\":[],\"core_phrases\":[],\"enriched_topics\":[],\"enriched_phrases\":[[\"p\",0.4]]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_profiles(&path, &topic_index, &vocab),
            Err(ProfileError::NotNormalized { .. })
        ));
    }

    #[test]
    fn sparse_helpers() {
        let v: SparseVec = vec![(1, 0.25), (4, 0.75)];
        assert_eq!(sparse_get(&v, 4), 0.75);
        assert_eq!(sparse_get(&v, 2), 0.0);
        assert!((sparse_sum(&v) - 1.0).abs() < 1e-15);
    }
}
