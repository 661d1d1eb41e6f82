//! Speech-window and term-text embeddings behind one provider interface.
//!
//! The real speech/text encoders live behind the remote provider boundary
//! (see [`crate::remote`]); this module supplies the attention-pooling head
//! used on top of encoder outputs, plus deterministic mock / oracle /
//! file-store providers for desk-scale experiments and tests.

use crate::glossary::TermId;
use crate::index::TermIndex;
use crate::stream::WindowAudio;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Providers must return vectors whose norm is 1 within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Below this Euclidean norm a vector cannot be meaningfully normalized.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot normalize a vector with norm <= {NORM_EPSILON}")]
    Degenerate,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("embedding store has no entry for hash {hash}")]
    StoreMiss { hash: String },
    #[error("transport failure after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },
    #[error("bad response from embedding service: {msg}")]
    Protocol { msg: String },
}

/// `v / ||v||`, failing on effectively-zero input.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, EmbedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite("normalization input".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= NORM_EPSILON {
        return Err(EmbedError::Degenerate);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Encoder output matrix `H` (`rows` frames by `cols` features), all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, EmbedError> {
        if rows == 0 || cols == 0 {
            return Err(EmbedError::EmptyInput("feature matrix".into()));
        }
        if values.len() != rows * cols {
            return Err(EmbedError::Dim {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite("feature matrix".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Two-layer scorer plus linear projection: per-frame attention scores are
/// `w2 . tanh(w1 h + b1) + b2`, and the pooled vector is projected to the
/// index dimension and normalized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoolingHead {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    /// `hidden` rows of `d_in` weights.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    /// `d_out` rows of `d_in` weights; no bias.
    pub proj: Vec<Vec<f64>>,
}

impl PoolingHead {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let shape_ok = self.hidden > 0
            && self.d_in > 0
            && self.d_out > 0
            && self.w1.len() == self.hidden
            && self.w1.iter().all(|r| r.len() == self.d_in)
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden
            && self.proj.len() == self.d_out
            && self.proj.iter().all(|r| r.len() == self.d_in);
        if !shape_ok {
            return Err(EmbedError::Dim {
                expected: self.hidden * self.d_in,
                got: self.w1.iter().map(Vec::len).sum(),
            });
        }
        let finite = self
            .w1
            .iter()
            .chain(self.proj.iter())
            .flatten()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(std::iter::once(&self.b2))
            .all(|v| v.is_finite());
        if !finite {
            return Err(EmbedError::NonFinite("pooling head parameters".into()));
        }
        Ok(())
    }

    /// Default hidden width is `d_in / 4` (at least 1).
    pub fn default_hidden(d_in: usize) -> usize {
        (d_in / 4).max(1)
    }

    /// Seeded random parameters, for tests and examples.
    pub fn random(seed: u64, d_in: usize, hidden: usize, d_out: usize) -> Self {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let w1 = mat(hidden, d_in);
        let proj_rows = mat(d_out, d_in);
        let mut vecf = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        PoolingHead {
            d_in,
            hidden,
            d_out,
            w1,
            b1: vecf(hidden),
            w2: vecf(hidden),
            b2: rng.random_range(-1.0..1.0),
            proj: proj_rows,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(|e| EmbedError::Protocol {
            msg: format!("read {}: {e}", path.display()),
        })?;
        let head: PoolingHead = serde_json::from_str(&text).map_err(|e| EmbedError::Protocol {
            msg: format!("parse {}: {e}", path.display()),
        })?;
        head.validate()?;
        Ok(head)
    }

    fn score(&self, row: &[f64]) -> f64 {
        let mut out = self.b2;
        for (h, (w_row, b)) in self.w1.iter().zip(&self.b1).enumerate() {
            let pre: f64 = w_row.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + b;
            out += self.w2[h] * pre.tanh();
        }
        out
    }

    /// Pool, project, and normalize to a `d_out` unit vector.
    pub fn forward(&self, h: &FeatureMatrix) -> Result<Vec<f64>, EmbedError> {
        let pooled = attention_pool(h, self)?;
        let projected: Vec<f64> = self
            .proj
            .iter()
            .map(|row| row.iter().zip(&pooled).map(|(w, x)| w * x).sum())
            .collect();
        l2_normalize(&projected)
    }
}

/// Softmax-weighted sum of the rows of `H`, with weights from the head's
/// per-row scorer. The weights sum to 1, so the output is a convex
/// combination of the rows.
pub fn attention_pool(h: &FeatureMatrix, head: &PoolingHead) -> Result<Vec<f64>, EmbedError> {
    if head.d_in != h.cols() {
        return Err(EmbedError::Dim {
            expected: head.d_in,
            got: h.cols(),
        });
    }
    let scores: Vec<f64> = (0..h.rows()).map(|t| head.score(h.row(t))).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EmbedError::NonFinite("attention scores".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let mut pooled = vec![0.0; h.cols()];
    for (t, weight) in exp.iter().enumerate() {
        let alpha = weight / sum;
        for (p, x) in pooled.iter_mut().zip(h.row(t)) {
            *p += alpha * x;
        }
    }
    Ok(pooled)
}

/// Whether a provider tolerates concurrent calls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serial,
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds one padded window of audio into a unit vector.
    fn embed_window(&self, window: &WindowAudio) -> Result<Vec<f32>, EmbedError>;

    /// Embeds a term's text into a unit vector.
    fn embed_term(&self, text: &str) -> Result<Vec<f32>, EmbedError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

/// Hashes seed, a kind tag, and the input bytes into a seeded Gaussian draw,
/// then normalizes. Reproducible and collision-unlikely, with no model
/// dependency.
#[derive(Clone, Debug)]
pub struct MockProvider {
    seed: u64,
    dim: usize,
}

pub(crate) fn hash_to_unit_vector(seed: u64, tag: &[u8], bytes: &[u8], dim: usize) -> Vec<f32> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag);
    hasher.update(bytes);
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha12Rng::from_seed(digest);
    let raw: Vec<f64> = (0..dim)
        .map(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal))
        .collect();
    // A zero draw from dim independent Gaussians is not reachable in f64.
    to_f32(l2_normalize(&raw).expect("gaussian draw is nonzero"))
}

impl MockProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }
}

impl EmbeddingProvider for MockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_window(&self, window: &WindowAudio) -> Result<Vec<f32>, EmbedError> {
        if window.samples.is_empty() {
            return Err(EmbedError::EmptyInput("window audio".into()));
        }
        Ok(hash_to_unit_vector(
            self.seed,
            b"audio",
            &window.byte_content(),
            self.dim,
        ))
    }

    fn embed_term(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput("term text".into()));
        }
        Ok(hash_to_unit_vector(
            self.seed,
            b"text",
            text.as_bytes(),
            self.dim,
        ))
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// A gold span used by the oracle provider: term `term_id` is spoken over
/// `[start_s, end_s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub term_id: TermId,
    pub start_s: f64,
    pub end_s: f64,
}

/// Embeds a window as the normalized sum of the indexed vectors of the gold
/// terms spoken entirely inside it; windows containing no gold span map to a
/// fixed reserved null direction. Makes end-to-end recall provable at desk
/// scale.
pub struct OracleProvider {
    dim: usize,
    vectors: Vec<Vec<f32>>,
    terms_lower: HashMap<String, TermId>,
    spans: Vec<GoldSpan>,
    null: Vec<f32>,
    seed: u64,
}

/// Slack when testing span-in-window containment, absorbing float grid noise.
const SPAN_TOL: f64 = 1e-9;

impl OracleProvider {
    pub fn new(index: &TermIndex, spans: Vec<GoldSpan>, seed: u64) -> Self {
        let vectors = (0..index.len())
            .map(|i| index.vector(TermId(i as u32)).to_vec())
            .collect();
        let terms_lower = index
            .glossary()
            .entries()
            .iter()
            .map(|e| (e.source_term.to_lowercase(), e.term_id))
            .collect();
        let null = hash_to_unit_vector(seed, b"null-window", b"", index.dim());
        Self {
            dim: index.dim(),
            vectors,
            terms_lower,
            spans,
            null,
            seed,
        }
    }

    fn gold_in_window(&self, window: &WindowAudio) -> Vec<TermId> {
        self.spans
            .iter()
            .filter(|s| {
                window.start_s - SPAN_TOL <= s.start_s && s.end_s <= window.end_s + SPAN_TOL
            })
            .map(|s| s.term_id)
            .collect()
    }
}

impl EmbeddingProvider for OracleProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_window(&self, window: &WindowAudio) -> Result<Vec<f32>, EmbedError> {
        if window.end_s <= window.start_s - SPAN_TOL && window.samples.is_empty() {
            return Err(EmbedError::EmptyInput("window audio".into()));
        }
        let gold = self.gold_in_window(window);
        if gold.is_empty() {
            return Ok(self.null.clone());
        }
        let mut sum = vec![0.0f64; self.dim];
        for id in gold {
            for (acc, x) in sum.iter_mut().zip(&self.vectors[id.as_usize()]) {
                *acc += *x as f64;
            }
        }
        Ok(to_f32(l2_normalize(&sum)?))
    }

    fn embed_term(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput("term text".into()));
        }
        match self.terms_lower.get(&text.trim().to_lowercase()) {
            Some(id) => Ok(self.vectors[id.as_usize()].clone()),
            None => Ok(hash_to_unit_vector(
                self.seed,
                b"text",
                text.as_bytes(),
                self.dim,
            )),
        }
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// Content-addressed vector store: a binary vector file (same layout as the
/// term index) keyed by a JSON-lines manifest from input hash to row.
pub struct FileStoreProvider {
    dim: usize,
    rows: Vec<Vec<f32>>,
    by_hash: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoreManifestLine {
    hash: String,
    row: usize,
}

/// Hash key for file-store lookups: sha256 over a kind tag plus content.
pub fn store_key(kind: &str, bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

impl FileStoreProvider {
    pub fn load(vectors_path: &Path, manifest_path: &Path) -> Result<Self, EmbedError> {
        let (dim, rows) = crate::index::read_vectors_file(vectors_path).map_err(|e| {
            EmbedError::Protocol {
                msg: format!("read {}: {e}", vectors_path.display()),
            }
        })?;
        let text = fs::read_to_string(manifest_path).map_err(|e| EmbedError::Protocol {
            msg: format!("read {}: {e}", manifest_path.display()),
        })?;
        let mut by_hash = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: StoreManifestLine =
                serde_json::from_str(line).map_err(|e| EmbedError::Protocol {
                    msg: format!("manifest line {}: {e}", i + 1),
                })?;
            if entry.row >= rows.len() {
                return Err(EmbedError::Protocol {
                    msg: format!("manifest line {}: row {} out of range", i + 1, entry.row),
                });
            }
            by_hash.insert(entry.hash, entry.row);
        }
        Ok(Self { dim, rows, by_hash })
    }

    /// Writes a store for the given (kind, bytes, vector) items.
    pub fn write(
        vectors_path: &Path,
        manifest_path: &Path,
        dim: usize,
        items: &[(String, Vec<f32>)],
    ) -> std::io::Result<()> {
        let rows: Vec<&[f32]> = items.iter().map(|(_, v)| v.as_slice()).collect();
        crate::index::write_vectors_file(vectors_path, dim, &rows)?;
        let mut manifest = String::new();
        for (row, (hash, _)) in items.iter().enumerate() {
            let line = StoreManifestLine {
                hash: hash.clone(),
                row,
            };
            manifest.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
            manifest.push('\n');
        }
        fs::write(manifest_path, manifest)
    }

    fn lookup(&self, hash: &str) -> Result<Vec<f32>, EmbedError> {
        self.by_hash
            .get(hash)
            .map(|&row| self.rows[row].clone())
            .ok_or_else(|| EmbedError::StoreMiss {
                hash: hash.to_string(),
            })
    }
}

impl EmbeddingProvider for FileStoreProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_window(&self, window: &WindowAudio) -> Result<Vec<f32>, EmbedError> {
        self.lookup(&store_key("audio", &window.byte_content()))
    }

    fn embed_term(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        self.lookup(&store_key("text", text.as_bytes()))
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window_from(samples: Vec<f32>) -> WindowAudio {
        WindowAudio {
            start_s: 0.0,
            end_s: samples.len() as f64 / 16000.0,
            pad_s: 0.0,
            samples,
        }
    }

    fn norm32(v: &[f32]) -> f64 {
        v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
    }

    fn dot32(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent() {
        let v = l2_normalize(&[0.2, -0.7, 0.4]).unwrap();
        let again = l2_normalize(&v).unwrap();
        for (a, b) in v.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_zero_vector_fails() {
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(EmbedError::Degenerate)
        ));
    }

    #[test]
    fn pool_single_row_is_identity() {
        let h = FeatureMatrix::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let head = PoolingHead::random(1, 3, 2, 2);
        let v = attention_pool(&h, &head).unwrap();
        assert_eq!(v, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_head_pools_to_row_mean() {
        let h = FeatureMatrix::new(4, 2, vec![1.0, 0.0, 3.0, 0.0, 5.0, 4.0, 7.0, 0.0]).unwrap();
        let head = PoolingHead {
            d_in: 2,
            hidden: 1,
            d_out: 2,
            w1: vec![vec![0.0, 0.0]],
            b1: vec![0.0],
            w2: vec![0.0],
            b2: 0.0,
            proj: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let v = attention_pool(&h, &head).unwrap();
        assert!((v[0] - 4.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    // Independent score -> softmax -> weighted-sum evaluation, written
    // straight from the definition.
    fn pool_reference(h: &FeatureMatrix, head: &PoolingHead) -> Vec<f64> {
        let mut scores = Vec::new();
        for t in 0..h.rows() {
            let row = h.row(t);
            let mut s = head.b2;
            for k in 0..head.hidden {
                let mut pre = head.b1[k];
                for (j, x) in row.iter().enumerate() {
                    pre += head.w1[k][j] * x;
                }
                s += head.w2[k] * pre.tanh();
            }
            scores.push(s);
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        let mut out = vec![0.0; h.cols()];
        for (t, score) in scores.iter().enumerate() {
            let a = (score - m).exp() / z;
            for (j, x) in h.row(t).iter().enumerate() {
                out[j] += a * x;
            }
        }
        out
    }

    #[test]
    fn pool_matches_reference_evaluation() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let values: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = FeatureMatrix::new(5, 8, values).unwrap();
        let head = PoolingHead::random(7, 8, 2, 4);
        let got = attention_pool(&h, &head).unwrap();
        let want = pool_reference(&h, &head);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn head_forward_is_unit_norm() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = FeatureMatrix::new(6, 8, values).unwrap();
        let head = PoolingHead::random(3, 8, PoolingHead::default_hidden(8), 5);
        let v = head.forward(&h).unwrap();
        assert_eq!(v.len(), 5);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mock_is_deterministic_per_content() {
        let p = MockProvider::new(5, 16);
        let a = p.embed_window(&window_from(vec![0.1, 0.2, 0.3])).unwrap();
        let b = p.embed_window(&window_from(vec![0.1, 0.2, 0.3])).unwrap();
        assert_eq!(a, b);
        let c = p.embed_window(&window_from(vec![0.1, 0.2, 0.4])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mock_terms_distinct_and_deterministic() {
        let p = MockProvider::new(5, 32);
        let a = p.embed_term("abc").unwrap();
        let a2 = p.embed_term("abc").unwrap();
        let b = p.embed_term("abd").unwrap();
        assert_eq!(a, a2);
        assert!(dot32(&a, &b) < 1.0 - 1e-6);
    }

    #[test]
    fn mock_supports_large_dim() {
        let p = MockProvider::new(1, 1024);
        let v = p.embed_term("representation").unwrap();
        assert_eq!(v.len(), 1024);
        assert!((norm32(&v) - 1.0).abs() < UNIT_NORM_TOL);
    }

    #[test]
    fn empty_inputs_rejected() {
        let p = MockProvider::new(5, 8);
        assert!(matches!(
            p.embed_term("  "),
            Err(EmbedError::EmptyInput(_))
        ));
        assert!(matches!(
            p.embed_window(&window_from(vec![])),
            Err(EmbedError::EmptyInput(_))
        ));
    }

    fn build_test_index(n: usize, dim: usize, seed: u64) -> TermIndex {
        use crate::glossary::Glossary;
        use crate::lang::Lang;
        let zh = Lang::new("zh");
        let pairs: Vec<_> = (0..n)
            .map(|i| {
                (
                    format!("term{i}"),
                    [(zh.clone(), format!("翻{i}"))].into_iter().collect(),
                )
            })
            .collect();
        let glossary = Glossary::from_pairs(pairs, &[zh]).unwrap();
        crate::index::build_index(glossary, &MockProvider::new(seed, dim)).unwrap()
    }

    #[test]
    fn oracle_single_gold_has_cosine_one() {
        let index = build_test_index(20, 24, 11);
        let spans = vec![GoldSpan {
            term_id: TermId(7),
            start_s: 1.0,
            end_s: 1.5,
        }];
        let oracle = OracleProvider::new(&index, spans, 11);
        let w = WindowAudio {
            start_s: 0.5,
            end_s: 2.42,
            pad_s: 0.0,
            samples: vec![0.0; 16],
        };
        let v = oracle.embed_window(&w).unwrap();
        let t = index.vector(TermId(7));
        assert!((dot32(&v, t) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn oracle_two_gold_beats_all_others() {
        let index = build_test_index(30, 24, 13);
        let spans = vec![
            GoldSpan {
                term_id: TermId(3),
                start_s: 0.2,
                end_s: 0.6,
            },
            GoldSpan {
                term_id: TermId(19),
                start_s: 0.9,
                end_s: 1.4,
            },
        ];
        let oracle = OracleProvider::new(&index, spans, 13);
        let w = WindowAudio {
            start_s: 0.0,
            end_s: 1.92,
            pad_s: 0.0,
            samples: vec![0.0; 16],
        };
        let v = oracle.embed_window(&w).unwrap();
        let gold_min = dot32(&v, index.vector(TermId(3))).min(dot32(&v, index.vector(TermId(19))));
        for i in 0..30u32 {
            if i == 3 || i == 19 {
                continue;
            }
            let other = dot32(&v, index.vector(TermId(i)));
            assert!(
                other < gold_min,
                "term {i} at {other} not below gold floor {gold_min}"
            );
        }
    }

    #[test]
    fn oracle_empty_window_is_null_direction() {
        let index = build_test_index(5, 16, 3);
        let oracle = OracleProvider::new(&index, vec![], 3);
        let w = WindowAudio {
            start_s: 0.0,
            end_s: 1.92,
            pad_s: 0.0,
            samples: vec![0.0; 16],
        };
        let a = oracle.embed_window(&w).unwrap();
        let b = oracle.embed_window(&w).unwrap();
        assert_eq!(a, b);
        assert!((norm32(&a) - 1.0).abs() < UNIT_NORM_TOL);
    }

    #[test]
    fn file_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vectors = dir.path().join("store.vec");
        let manifest = dir.path().join("store.jsonl");
        let mock = MockProvider::new(21, 8);
        let items: Vec<(String, Vec<f32>)> = ["alpha", "beta"]
            .iter()
            .map(|t| {
                (
                    store_key("text", t.as_bytes()),
                    mock.embed_term(t).unwrap(),
                )
            })
            .collect();
        FileStoreProvider::write(&vectors, &manifest, 8, &items).unwrap();
        let store = FileStoreProvider::load(&vectors, &manifest).unwrap();
        assert_eq!(store.embed_term("alpha").unwrap(), items[0].1);
        assert_eq!(store.embed_term("beta").unwrap(), items[1].1);
        assert!(matches!(
            store.embed_term("gamma"),
            Err(EmbedError::StoreMiss { .. })
        ));
    }

    proptest! {
        // Convex combination: pooled output lies within each column's range.
        #[test]
        fn pooled_within_column_bounds(seed in 0u64..500, rows in 1usize..7, cols in 1usize..6) {
            use rand::Rng;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h = FeatureMatrix::new(rows, cols, values).unwrap();
            let head = PoolingHead::random(seed ^ 0xABCD, cols, 3, 2);
            let v = attention_pool(&h, &head).unwrap();
            for (j, pooled) in v.iter().enumerate() {
                let col: Vec<f64> = (0..rows).map(|t| h.row(t)[j]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*pooled >= lo - 1e-9 && *pooled <= hi + 1e-9);
            }
        }

        // Every provider output is unit norm and reproducible under its seed.
        #[test]
        fn provider_outputs_unit_and_reproducible(seed in 0u64..200, dim in 1usize..64) {
            let p1 = MockProvider::new(seed, dim);
            let p2 = MockProvider::new(seed, dim);
            let text = format!("t-{seed}");
            let a = p1.embed_term(&text).unwrap();
            let b = p2.embed_term(&text).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!((norm32(&a) - 1.0).abs() < UNIT_NORM_TOL);
        }
    }
}
