//! Property tests for the numeric invariants that hold across the whole
//! input space, not just the worked examples.

use cindex::embed::{mock_vector, similarity, Metric};
use cindex::eval::dense_search;
use cindex::expand::{rescore_with_snippets, RescoreConfig, RescoreVariant, Snippet, SnippetIndex};
use cindex::eval::{RankedEntry, RankedList};
use cindex::extractor::top_k_renormalized;
use cindex::lexical::{tokenize, Bm25Index, Bm25Params};
use cindex::profile::SparseVec;
use cindex::qgen::{combined_rank, sample_conditions, undercoverage_pi, z_normalize};
use cindex::vecstore::EmbeddingMatrix;
use proptest::prelude::*;

fn sparse_dist(max_support: usize) -> impl Strategy<Value = SparseVec> {
    prop::collection::btree_map(0usize..200, 0.01f64..1.0, 1..max_support).prop_map(|m| {
        let total: f64 = m.values().sum();
        m.into_iter().map(|(j, v)| (j, v / total)).collect()
    })
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_cosine_bounded(a_text in ".{1,12}", b_text in ".{1,12}") {
        let a = mock_vector(&a_text, 24, 5);
        let b = mock_vector(&b_text, 24, 5);
        for metric in [Metric::Cosine, Metric::Dot] {
            let ab = similarity(&a, &b, metric).unwrap();
            let ba = similarity(&b, &a, metric).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }
        let c = similarity(&a, &b, Metric::Cosine).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
    }

    #[test]
    fn undercoverage_is_a_distribution_on_the_doc_support(
        y_d in sparse_dist(50),
        y_q in sparse_dist(50),
    ) {
        let pi = undercoverage_pi(&y_d, &y_q, 1e-3).unwrap();
        let sum: f64 = pi.iter().map(|&(_, p)| p).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        let support: std::collections::BTreeSet<usize> = y_d.iter().map(|&(j, _)| j).collect();
        for &(j, p) in &pi {
            prop_assert!(p > 0.0);
            prop_assert!(support.contains(&j));
        }
        prop_assert_eq!(pi.len(), y_d.len());
    }

    #[test]
    fn sampling_without_replacement_is_distinct_and_seeded(
        pi in sparse_dist(30),
        count in 1usize..40,
        seed in any::<u64>(),
    ) {
        let a = sample_conditions(&pi, count, seed).unwrap();
        let b = sample_conditions(&pi, count, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mut dedup = a.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), a.len(), "draws must be distinct");
        prop_assert_eq!(a.len(), count.min(pi.len()));
    }

    #[test]
    fn top_k_renormalization_is_a_distribution(
        probs in prop::collection::vec(1e-6f64..1.0, 1..64),
        k in 1usize..80,
    ) {
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let kept = top_k_renormalized(&probs, k);
        prop_assert_eq!(kept.len(), k.min(probs.len()));
        let sum: f64 = kept.iter().map(|&(_, p)| p).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        // support really is the top-k of the input
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let top: std::collections::BTreeSet<usize> =
            order[..kept.len()].iter().copied().collect();
        for &(j, _) in &kept {
            prop_assert!(top.contains(&j));
        }
    }

    #[test]
    fn bm25_is_additive_over_query_terms(
        docs in prop::collection::vec("[a-e ]{1,30}", 1..6),
        q1 in "[a-e]{1,4}",
        q2 in "[a-e]{1,4}",
    ) {
        let index = Bm25Index::build(docs.iter().map(String::as_str), Bm25Params::default());
        let t1 = tokenize(&q1);
        let t2 = tokenize(&q2);
        let mut joint = t1.clone();
        joint.extend(t2.clone());
        for d in 0..docs.len() {
            let sum = index.score(&t1, d).unwrap() + index.score(&t2, d).unwrap();
            let both = index.score(&joint, d).unwrap();
            prop_assert!((sum - both).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_search_smaller_k_is_a_prefix(seed in any::<u64>(), k1 in 1usize..10, extra in 0usize..10) {
        let mut matrix = EmbeddingMatrix::new(16);
        for i in 0..20 {
            matrix.push(format!("d{i:02}"), mock_vector(&format!("{seed}-{i}"), 16, 0)).unwrap();
        }
        let q = mock_vector(&format!("q{seed}"), 16, 0);
        let k2 = k1 + extra;
        let a = dense_search("q", &q, &matrix, k1, Metric::Cosine).unwrap();
        let b = dense_search("q", &q, &matrix, k2, Metric::Cosine).unwrap();
        prop_assert_eq!(&a.entries[..], &b.entries[..a.entries.len()]);
    }

    #[test]
    fn rescoring_never_touches_the_tail(
        n in 3usize..20,
        top_k in 1usize..6,
        alpha in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let entries: Vec<RankedEntry> = (0..n)
            .map(|i| RankedEntry {
                doc_id: format!("d{i:02}"),
                score: 1.0 - i as f64 / n as f64,
                rank: i as u32 + 1,
            })
            .collect();
        let base = RankedList { query_id: "q".into(), entries };
        let mut m = EmbeddingMatrix::new(8);
        let mut snippets = Vec::new();
        for i in 0..n {
            let s = Snippet { doc_id: format!("d{i:02}"), query_seq: 1, text: String::new() };
            m.push(s.embedding_id(), mock_vector(&format!("s{seed}-{i}"), 8, 0)).unwrap();
            snippets.push(s);
        }
        let index = SnippetIndex::from_parts(snippets, m).unwrap();
        let cfg = RescoreConfig { alpha, top_k, variant: RescoreVariant::SnippetMax, hyde_n: 0 };
        let q = mock_vector(&format!("q{seed}"), 8, 0);
        let out = rescore_with_snippets(&q, &base, &index, &cfg, Metric::Cosine).unwrap();
        let cut = top_k.min(n);
        // the tail keeps identical ids, scores, and ranks
        prop_assert_eq!(&out.entries[cut..], &base.entries[cut..]);
        // the rescored block is a permutation of the base block
        let mut block: Vec<&str> = out.entries[..cut].iter().map(|e| e.doc_id.as_str()).collect();
        block.sort_unstable();
        let mut expect: Vec<&str> = base.entries[..cut].iter().map(|e| e.doc_id.as_str()).collect();
        expect.sort_unstable();
        prop_assert_eq!(block, expect);
    }

    #[test]
    fn combined_rank_is_invariant_under_affine_rescaling(
        scores in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..20),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let pool: Vec<(String, f64, f64)> = scores
            .iter()
            .enumerate()
            .map(|(i, &(t, c))| (format!("d{i:02}"), t, c))
            .collect();
        let source = pool[0].0.clone();
        let (combined, rank) = combined_rank(&pool, &source);
        // exact ties sit on a floating-point knife edge where the rank is
        // tie-break territory, not an affine-invariance question
        for i in 0..combined.len() {
            for j in (i + 1)..combined.len() {
                prop_assume!((combined[i] - combined[j]).abs() > 1e-6);
            }
        }
        let scaled: Vec<(String, f64, f64)> = pool
            .iter()
            .map(|(id, t, c)| (id.clone(), a * t + b, *c))
            .collect();
        let (_, rank2) = combined_rank(&scaled, &source);
        prop_assert_eq!(rank, rank2);
    }

    #[test]
    fn z_normalize_is_centered_and_unit_scale(values in prop::collection::vec(-100.0f64..100.0, 2..50)) {
        let z = z_normalize(&values);
        let mean: f64 = z.iter().sum::<f64>() / z.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        let var: f64 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        // either degenerate (all zero) or unit variance
        prop_assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-6, "var {var}");
    }
}
