//! The concept extractor: a shared hidden layer with two softmax heads that
//! predicts a document's core topics and core phrases from its embedding,
//! trained with plain mini-batch gradient descent on the summed multi-hot
//! cross-entropy of both heads.
//!
//! Everything is explicit f64 loops so the gradient code stays auditable and
//! bit-reproducible for a fixed seed. Enrichment keeps the top-k predicted
//! concepts per head and renormalizes them into a sparse distribution.

use crate::embed::Embedder;
use crate::profile::{ConceptProfile, ProfileSet, SparseVec};
use crate::vecstore::EmbeddingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("input has dimension {got}, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("profile for \"{0}\" has no positive {1} labels")]
    NoPositives(String, &'static str),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training config field {0} must be positive")]
    BadConfig(&'static str),
    #[error("no embedding for training document \"{0}\"")]
    MissingEmbedding(String),
    #[error("model file {path} is corrupt: {msg}")]
    BadModelFile { path: String, msg: String },
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 300,
            batch_size: 32,
            hidden: 64,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ExtractorError> {
        if self.learning_rate < 0.0 {
            return Err(ExtractorError::BadConfig("learning_rate"));
        }
        if self.epochs == 0 {
            return Err(ExtractorError::BadConfig("epochs"));
        }
        if self.batch_size == 0 {
            return Err(ExtractorError::BadConfig("batch_size"));
        }
        if self.hidden == 0 {
            return Err(ExtractorError::BadConfig("hidden"));
        }
        Ok(())
    }
}

/// Model parameters. Matrices are row-major: `w1` is dim x hidden, `wt` is
/// hidden x topics, `wp` is hidden x phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorModel {
    pub dim: usize,
    pub hidden: usize,
    pub n_topics: usize,
    pub n_phrases: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub wt: Vec<f64>,
    pub bt: Vec<f64>,
    pub wp: Vec<f64>,
    pub bp: Vec<f64>,
}

/// Gradients in the same block layout as the model.
#[derive(Debug, Clone)]
pub struct GradBlocks {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub wt: Vec<f64>,
    pub bt: Vec<f64>,
    pub wp: Vec<f64>,
    pub bp: Vec<f64>,
}

impl GradBlocks {
    fn zeros(model: &ExtractorModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            wt: vec![0.0; model.wt.len()],
            bt: vec![0.0; model.bt.len()],
            wp: vec![0.0; model.wp.len()],
            bp: vec![0.0; model.bp.len()],
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.wt.iter_mut().zip(&other.wt) {
            *a += b;
        }
        for (a, b) in self.bt.iter_mut().zip(&other.bt) {
            *a += b;
        }
        for (a, b) in self.wp.iter_mut().zip(&other.wp) {
            *a += b;
        }
        for (a, b) in self.bp.iter_mut().zip(&other.bp) {
            *a += b;
        }
    }
}

const PROB_FLOOR: f64 = 1e-12;

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct ForwardCache {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    topic_probs: Vec<f64>,
    phrase_probs: Vec<f64>,
}

impl ExtractorModel {
    /// Seeded initialization: every parameter uniform in +-1/sqrt(fan_in),
    /// drawn in block order w1, b1, wt, bt, wp, bp.
    pub fn init(dim: usize, hidden: usize, n_topics: usize, n_phrases: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let w1 = draw(dim * hidden, dim);
        let b1 = draw(hidden, dim);
        let wt = draw(hidden * n_topics, hidden);
        let bt = draw(n_topics, hidden);
        let wp = draw(hidden * n_phrases, hidden);
        let bp = draw(n_phrases, hidden);
        Self {
            dim,
            hidden,
            n_topics,
            n_phrases,
            w1,
            b1,
            wt,
            bt,
            wp,
            bp,
        }
    }

    fn forward_cached(&self, e: &[f32]) -> Result<ForwardCache, ExtractorError> {
        if e.len() != self.dim {
            return Err(ExtractorError::DimensionMismatch {
                got: e.len(),
                want: self.dim,
            });
        }
        let mut hidden_pre = self.b1.clone();
        for (d, &x) in e.iter().enumerate() {
            let x = x as f64;
            if x == 0.0 {
                continue;
            }
            let row = &self.w1[d * self.hidden..(d + 1) * self.hidden];
            for (h, &w) in row.iter().enumerate() {
                hidden_pre[h] += x * w;
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let mut t_logits = self.bt.clone();
        let mut p_logits = self.bp.clone();
        for (h, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let trow = &self.wt[h * self.n_topics..(h + 1) * self.n_topics];
            for (i, &w) in trow.iter().enumerate() {
                t_logits[i] += a * w;
            }
            let prow = &self.wp[h * self.n_phrases..(h + 1) * self.n_phrases];
            for (j, &w) in prow.iter().enumerate() {
                p_logits[j] += a * w;
            }
        }
        Ok(ForwardCache {
            hidden_pre,
            hidden,
            topic_probs: softmax(&t_logits),
            phrase_probs: softmax(&p_logits),
        })
    }

    /// Predicted topic and phrase distributions (each sums to 1).
    pub fn forward(&self, e: &[f32]) -> Result<(Vec<f64>, Vec<f64>), ExtractorError> {
        let cache = self.forward_cached(e)?;
        Ok((cache.topic_probs, cache.phrase_probs))
    }

    /// Multi-hot cross-entropy summed over both heads, probabilities clamped
    /// at 1e-12 before the log.
    pub fn loss(pred: (&[f64], &[f64]), profile: &ConceptProfile) -> Result<f64, ExtractorError> {
        if profile.core_topics.is_empty() {
            return Err(ExtractorError::NoPositives(profile.doc_id.clone(), "topic"));
        }
        if profile.core_phrases.is_empty() {
            return Err(ExtractorError::NoPositives(profile.doc_id.clone(), "phrase"));
        }
        let (yt, yp) = pred;
        let mut loss = 0.0;
        for &i in &profile.core_topics {
            loss -= yt[i].max(PROB_FLOOR).ln();
        }
        for &j in &profile.core_phrases {
            loss -= yp[j].max(PROB_FLOOR).ln();
        }
        Ok(loss)
    }

    /// Analytic gradients and loss for a single example.
    pub fn grads(&self, e: &[f32], profile: &ConceptProfile) -> Result<(GradBlocks, f64), ExtractorError> {
        let cache = self.forward_cached(e)?;
        let loss = Self::loss((&cache.topic_probs, &cache.phrase_probs), profile)?;

        // d(loss)/d(logits) for a multi-hot target y with S positives is
        // S * softmax - y
        let st = profile.core_topics.len() as f64;
        let sp = profile.core_phrases.len() as f64;
        let mut gt: Vec<f64> = cache.topic_probs.iter().map(|&p| st * p).collect();
        for &i in &profile.core_topics {
            gt[i] -= 1.0;
        }
        let mut gp: Vec<f64> = cache.phrase_probs.iter().map(|&p| sp * p).collect();
        for &j in &profile.core_phrases {
            gp[j] -= 1.0;
        }

        let mut grads = GradBlocks::zeros(self);
        grads.bt.copy_from_slice(&gt);
        grads.bp.copy_from_slice(&gp);
        let mut dhidden = vec![0.0f64; self.hidden];
        for h in 0..self.hidden {
            let a = cache.hidden[h];
            let trow = &self.wt[h * self.n_topics..(h + 1) * self.n_topics];
            let grow = &mut grads.wt[h * self.n_topics..(h + 1) * self.n_topics];
            let mut acc = 0.0;
            for i in 0..self.n_topics {
                grow[i] = a * gt[i];
                acc += trow[i] * gt[i];
            }
            let prow = &self.wp[h * self.n_phrases..(h + 1) * self.n_phrases];
            let growp = &mut grads.wp[h * self.n_phrases..(h + 1) * self.n_phrases];
            for j in 0..self.n_phrases {
                growp[j] = a * gp[j];
                acc += prow[j] * gp[j];
            }
            dhidden[h] = if cache.hidden_pre[h] > 0.0 { acc } else { 0.0 };
        }
        grads.b1.copy_from_slice(&dhidden);
        for (d, &x) in e.iter().enumerate() {
            let x = x as f64;
            let row = &mut grads.w1[d * self.hidden..(d + 1) * self.hidden];
            for h in 0..self.hidden {
                row[h] = x * dhidden[h];
            }
        }
        Ok((grads, loss))
    }

    fn apply(&mut self, grads: &GradBlocks, lr: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grads.w1) {
            *w -= lr * g;
        }
        for (w, g) in self.b1.iter_mut().zip(&grads.b1) {
            *w -= lr * g;
        }
        for (w, g) in self.wt.iter_mut().zip(&grads.wt) {
            *w -= lr * g;
        }
        for (w, g) in self.bt.iter_mut().zip(&grads.bt) {
            *w -= lr * g;
        }
        for (w, g) in self.wp.iter_mut().zip(&grads.wp) {
            *w -= lr * g;
        }
        for (w, g) in self.bp.iter_mut().zip(&grads.bp) {
            *w -= lr * g;
        }
    }

    /// Mini-batch gradient descent on the summed loss. Deterministic for a
    /// fixed seed: init, epoch shuffles, and update order all come from one
    /// seeded stream. Documents lacking positive labels in either head are
    /// skipped with a warning. Returns the model and per-epoch mean loss.
    pub fn train(
        profiles: &ProfileSet,
        embeddings: &EmbeddingMatrix,
        n_topics: usize,
        n_phrases: usize,
        cfg: &TrainConfig,
    ) -> Result<(Self, Vec<f64>), ExtractorError> {
        cfg.validate()?;
        let mut usable: Vec<&ConceptProfile> = Vec::new();
        for p in profiles.iter() {
            if p.core_topics.is_empty() || p.core_phrases.is_empty() {
                log::warn!("skipping training doc {}: missing positive labels", p.doc_id);
                continue;
            }
            usable.push(p);
        }
        if usable.is_empty() {
            return Err(ExtractorError::EmptyTrainingSet);
        }
        let rows: Vec<&[f32]> = usable
            .iter()
            .map(|p| {
                embeddings
                    .row(&p.doc_id)
                    .ok_or_else(|| ExtractorError::MissingEmbedding(p.doc_id.clone()))
            })
            .collect::<Result<_, _>>()?;
        let dim = embeddings.dim();
        let mut model = Self::init(dim, cfg.hidden, n_topics, n_phrases, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..usable.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _epoch in 0..cfg.epochs {
            // Fisher-Yates with the epoch's slice of the seeded stream
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut total = GradBlocks::zeros(&model);
                for &idx in batch {
                    let (g, loss) = model.grads(rows[idx], usable[idx])?;
                    total.add(&g);
                    epoch_loss += loss;
                }
                model.apply(&total, cfg.learning_rate);
            }
            history.push(epoch_loss / usable.len() as f64);
        }
        Ok((model, history))
    }

    /// Keep the top-k entries of each head (ties broken by ascending index),
    /// zero the rest, renormalize to sum 1.
    pub fn enrich(&self, e: &[f32], k_topics: usize, k_phrases: usize) -> Result<(SparseVec, SparseVec), ExtractorError> {
        let (yt, yp) = self.forward(e)?;
        Ok((top_k_renormalized(&yt, k_topics), top_k_renormalized(&yp, k_phrases)))
    }

    /// Enriched distributions for free text. Empty text (no queries yet)
    /// yields all-zero vectors without touching the embedder.
    pub fn extract_from_text(
        &self,
        embedder: &Embedder,
        text: &str,
        k_topics: usize,
        k_phrases: usize,
    ) -> Result<(SparseVec, SparseVec), ExtractorError> {
        if text.trim().is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let emb = embedder.embed_one(text)?;
        self.enrich(&emb, k_topics, k_phrases)
    }

    fn blocks(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.wt, &self.bt, &self.wp, &self.bp]
    }

    /// Persist as `<stem>.manifest.json` plus `<stem>.params.f64` with the
    /// parameter blocks in order w1, b1, wt, bt, wp, bp (little-endian f64).
    pub fn save(&self, dir: &Path, stem: &str, train: &TrainConfig) -> Result<(), ExtractorError> {
        std::fs::create_dir_all(dir)?;
        let manifest = ModelManifest {
            dim: self.dim,
            hidden: self.hidden,
            n_topics: self.n_topics,
            n_phrases: self.n_phrases,
            seed: train.seed,
            train: train.clone(),
        };
        std::fs::write(
            dir.join(format!("{stem}.manifest.json")),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.params.f64")))?);
        for block in self.blocks() {
            for &v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, TrainConfig), ExtractorError> {
        let mpath = dir.join(format!("{stem}.manifest.json"));
        let manifest: ModelManifest = serde_json::from_str(&std::fs::read_to_string(&mpath)?)
            .map_err(|e| ExtractorError::BadModelFile {
                path: mpath.display().to_string(),
                msg: e.to_string(),
            })?;
        let ppath = dir.join(format!("{stem}.params.f64"));
        let raw = std::fs::read(&ppath)?;
        let mut model = Self {
            dim: manifest.dim,
            hidden: manifest.hidden,
            n_topics: manifest.n_topics,
            n_phrases: manifest.n_phrases,
            w1: vec![0.0; manifest.dim * manifest.hidden],
            b1: vec![0.0; manifest.hidden],
            wt: vec![0.0; manifest.hidden * manifest.n_topics],
            bt: vec![0.0; manifest.n_topics],
            wp: vec![0.0; manifest.hidden * manifest.n_phrases],
            bp: vec![0.0; manifest.n_phrases],
        };
        let expected: usize = model.blocks().iter().map(|b| b.len()).sum::<usize>() * 8;
        if raw.len() != expected {
            return Err(ExtractorError::BadModelFile {
                path: ppath.display().to_string(),
                msg: format!("{} bytes, expected {expected}", raw.len()),
            });
        }
        let mut cursor = raw.as_slice();
        let mut read_block = |block: &mut [f64]| {
            for v in block.iter_mut() {
                let mut buf = [0u8; 8];
                cursor.read_exact(&mut buf).expect("length checked above");
                *v = f64::from_le_bytes(buf);
            }
        };
        read_block(&mut model.w1);
        read_block(&mut model.b1);
        read_block(&mut model.wt);
        read_block(&mut model.bt);
        read_block(&mut model.wp);
        read_block(&mut model.bp);
        Ok((model, manifest.train))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    dim: usize,
    hidden: usize,
    n_topics: usize,
    n_phrases: usize,
    seed: u64,
    train: TrainConfig,
}

/// Top-k by probability (ties by ascending index), renormalized to sum 1,
/// returned sorted by index.
pub fn top_k_renormalized(probs: &[f64], k: usize) -> SparseVec {
    if probs.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.cmp(&b))
    });
    let kept = &mut order[..k.min(probs.len())];
    kept.sort_unstable();
    let total: f64 = kept.iter().map(|&i| probs[i]).sum();
    kept.iter().map(|&i| (i, probs[i] / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::mock_vector;
    use approx::assert_abs_diff_eq;

    fn profile(id: &str, topics: &[usize], phrases: &[usize]) -> ConceptProfile {
        ConceptProfile::new(id.to_string(), topics.to_vec(), phrases.to_vec())
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let mut model = ExtractorModel::init(4, 3, 5, 8, 0);
        for block in [&mut model.w1, &mut model.b1, &mut model.wt, &mut model.bt, &mut model.wp, &mut model.bp] {
            block.iter_mut().for_each(|v| *v = 0.0);
        }
        let (yt, yp) = model.forward(&[0.5, -0.5, 0.25, 1.0]).unwrap();
        for p in &yt {
            assert_abs_diff_eq!(*p, 1.0 / 5.0, epsilon = 1e-12);
        }
        for p in &yp {
            assert_abs_diff_eq!(*p, 1.0 / 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_outputs_are_distributions() {
        let model = ExtractorModel::init(8, 5, 4, 6, 42);
        let e = mock_vector("doc", 8, 0);
        let (yt, yp) = model.forward(&e).unwrap();
        assert_abs_diff_eq!(yt.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(yp.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(yt.iter().all(|&p| p > 0.0));
        assert!(yp.iter().all(|&p| p > 0.0));
        assert!(matches!(
            model.forward(&[0.0; 3]),
            Err(ExtractorError::DimensionMismatch { got: 3, want: 8 })
        ));
    }

    #[test]
    fn permuting_head_columns_permutes_output() {
        let model = ExtractorModel::init(6, 4, 3, 3, 9);
        let e = mock_vector("x", 6, 0);
        let (yt, _) = model.forward(&e).unwrap();
        let mut swapped = model.clone();
        for h in 0..swapped.hidden {
            swapped.wt.swap(h * 3, h * 3 + 2);
        }
        swapped.bt.swap(0, 2);
        let (yt2, _) = swapped.forward(&e).unwrap();
        assert_abs_diff_eq!(yt[0], yt2[2], epsilon = 1e-12);
        assert_abs_diff_eq!(yt[2], yt2[0], epsilon = 1e-12);
        assert_abs_diff_eq!(yt[1], yt2[1], epsilon = 1e-12);
    }

    #[test]
    fn loss_hand_cases() {
        // uniform predictions, one positive per head, |T|=4, |P|=8: ln4 + ln8
        let yt = vec![0.25; 4];
        let yp = vec![0.125; 8];
        let p = profile("d", &[2], &[5]);
        let loss = ExtractorModel::loss((&yt, &yp), &p).unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln() + 8.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 3.4657, epsilon = 1e-4);

        // probability 1 on the single positive of each head: loss 0
        let mut yt1 = vec![0.0; 4];
        yt1[2] = 1.0;
        let mut yp1 = vec![0.0; 8];
        yp1[5] = 1.0;
        // clamp keeps the zero entries out of the sum since they are not positives
        let loss = ExtractorModel::loss((&yt1, &yp1), &p).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);

        // doubling positives on a fixed uniform prediction doubles the head term
        let p2 = profile("d", &[0, 1], &[5]);
        let l1 = ExtractorModel::loss((&yt, &yp), &profile("d", &[0], &[5])).unwrap();
        let l2 = ExtractorModel::loss((&yt, &yp), &p2).unwrap();
        assert_abs_diff_eq!(l2 - 8.0f64.ln(), 2.0 * (l1 - 8.0f64.ln()), epsilon = 1e-12);

        assert!(matches!(
            ExtractorModel::loss((&yt, &yp), &profile("d", &[], &[1])),
            Err(ExtractorError::NoPositives(_, "topic"))
        ));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let model = ExtractorModel::init(8, 5, 4, 6, 123);
        let e = mock_vector("gradient check", 8, 3);
        let p = profile("d", &[1, 3], &[0, 2, 5]);
        let (analytic, _) = model.grads(&e, &p).unwrap();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let blocks: [(&str, usize); 6] = [
            ("w1", model.w1.len()),
            ("b1", model.b1.len()),
            ("wt", model.wt.len()),
            ("bt", model.bt.len()),
            ("wp", model.wp.len()),
            ("bp", model.bp.len()),
        ];
        for (name, len) in blocks {
            for idx in 0..len {
                let get = |m: &ExtractorModel, i: usize| match name {
                    "w1" => m.w1[i],
                    "b1" => m.b1[i],
                    "wt" => m.wt[i],
                    "bt" => m.bt[i],
                    "wp" => m.wp[i],
                    _ => m.bp[i],
                };
                let set = |m: &mut ExtractorModel, i: usize, v: f64| match name {
                    "w1" => m.w1[i] = v,
                    "b1" => m.b1[i] = v,
                    "wt" => m.wt[i] = v,
                    "bt" => m.bt[i] = v,
                    "wp" => m.wp[i] = v,
                    _ => m.bp[i] = v,
                };
                let orig = get(&model, idx);
                let mut plus = model.clone();
                set(&mut plus, idx, orig + h);
                let mut minus = model.clone();
                set(&mut minus, idx, orig - h);
                let lp = {
                    let (yt, yp) = plus.forward(&e).unwrap();
                    ExtractorModel::loss((&yt, &yp), &p).unwrap()
                };
                let lm = {
                    let (yt, yp) = minus.forward(&e).unwrap();
                    ExtractorModel::loss((&yt, &yp), &p).unwrap()
                };
                let numeric = (lp - lm) / (2.0 * h);
                let a = match name {
                    "w1" => analytic.w1[idx],
                    "b1" => analytic.b1[idx],
                    "wt" => analytic.wt[idx],
                    "bt" => analytic.bt[idx],
                    "wp" => analytic.wp[idx],
                    _ => analytic.bp[idx],
                };
                let denom = a.abs().max(numeric.abs());
                if denom > 1e-10 {
                    max_rel = max_rel.max((a - numeric).abs() / denom);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    fn toy_training_data() -> (ProfileSet, EmbeddingMatrix) {
        // two clusters of embeddings with disjoint label sets
        let mut embeddings = EmbeddingMatrix::new(8);
        let mut profiles = Vec::new();
        for i in 0..10 {
            let (cluster, base) = if i % 2 == 0 { ("alpha", 0) } else { ("beta", 2) };
            let id = format!("d{i}");
            let mut v = mock_vector(cluster, 8, 0);
            // small per-doc jitter within the cluster
            let noise = mock_vector(&id, 8, 1);
            for (a, b) in v.iter_mut().zip(noise) {
                *a += 0.05 * b;
            }
            embeddings.push(id.clone(), v).unwrap();
            profiles.push(profile(&id, &[base, base + 1], &[base, base + 1]));
        }
        (ProfileSet::from_profiles(profiles).unwrap(), embeddings)
    }

    #[test]
    fn training_is_deterministic_and_learns_separable_clusters() {
        let (profiles, embeddings) = toy_training_data();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 4,
            hidden: 8,
            seed: 11,
        };
        let (m1, h1) = ExtractorModel::train(&profiles, &embeddings, 4, 4, &cfg).unwrap();
        let (m2, h2) = ExtractorModel::train(&profiles, &embeddings, 4, 4, &cfg).unwrap();
        assert_eq!(m1, m2, "same cfg+data+seed must give bit-identical params");
        assert_eq!(h1, h2);
        assert!(
            h1.last().unwrap() <= &(0.5 * h1[0]),
            "separable toy problem must at least halve the loss: {} -> {}",
            h1[0],
            h1.last().unwrap()
        );
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (profiles, embeddings) = toy_training_data();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 4,
            hidden: 8,
            seed: 11,
        };
        let (model, history) = ExtractorModel::train(&profiles, &embeddings, 4, 4, &cfg).unwrap();
        let fresh = ExtractorModel::init(8, 8, 4, 4, 11);
        assert_eq!(model, fresh);
        for w in history.windows(2) {
            assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn enrich_hand_cases() {
        // k >= vocabulary: renormalizing the full distribution is identity
        let probs = vec![0.4, 0.3, 0.2, 0.1];
        let full = top_k_renormalized(&probs, 10);
        assert_eq!(full.len(), 4);
        for (i, (idx, v)) in full.iter().enumerate() {
            assert_eq!(*idx, i);
            assert_abs_diff_eq!(*v, probs[i], epsilon = 1e-12);
        }
        // k = 1: one-hot on the argmax
        let one = top_k_renormalized(&probs, 1);
        assert_eq!(one, vec![(0, 1.0)]);
        // top-2 of (0.4, 0.3, 0.2, 0.1): (4/7, 3/7)
        let two = top_k_renormalized(&probs, 2);
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].0, 0);
        assert_eq!(two[1].0, 1);
        assert_abs_diff_eq!(two[0].1, 4.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(two[1].1, 3.0 / 7.0, epsilon = 1e-12);
        // ties break to the ascending index
        let tied = top_k_renormalized(&[0.25, 0.25, 0.25, 0.25], 2);
        assert_eq!(tied.iter().map(|&(i, _)| i).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn enrich_support_is_top_k_of_forward() {
        let model = ExtractorModel::init(8, 5, 6, 9, 5);
        let e = mock_vector("doc", 8, 0);
        let (yt, _) = model.forward(&e).unwrap();
        let (et, ep) = model.enrich(&e, 3, 4).unwrap();
        assert_eq!(et.len(), 3);
        assert_eq!(ep.len(), 4);
        assert_abs_diff_eq!(et.iter().map(|&(_, v)| v).sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ep.iter().map(|&(_, v)| v).sum::<f64>(), 1.0, epsilon = 1e-9);
        let mut order: Vec<usize> = (0..yt.len()).collect();
        order.sort_by(|&a, &b| yt[b].partial_cmp(&yt[a]).unwrap().then(a.cmp(&b)));
        let top3: std::collections::HashSet<usize> = order[..3].iter().copied().collect();
        for (i, _) in et {
            assert!(top3.contains(&i));
        }
    }

    #[test]
    fn extract_from_empty_text_is_zero() {
        let model = ExtractorModel::init(8, 4, 3, 3, 0);
        let embedder = Embedder::new(crate::embed::ProviderConfig::mock(8, 0)).unwrap();
        let (t, p) = model.extract_from_text(&embedder, "", 2, 2).unwrap();
        assert!(t.is_empty() && p.is_empty());
        let (t1, p1) = model.extract_from_text(&embedder, "one query", 2, 2).unwrap();
        let emb = embedder.embed_one("one query").unwrap();
        let (t2, p2) = model.enrich(&emb, 2, 2).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn model_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::default();
        let model = ExtractorModel::init(6, 4, 5, 7, 99);
        model.save(dir.path(), "extractor", &cfg).unwrap();
        let (back, back_cfg) = ExtractorModel::load(dir.path(), "extractor").unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
    }
}
