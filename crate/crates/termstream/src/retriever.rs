//! Per-chunk terminology retrieval: top-k1 search over each sliding window
//! of the newly arrived chunk, then cross-window max-score deduplication and
//! top-k2 truncation.

use crate::config::Clock;
use crate::embedding::EmbeddingProvider;
use crate::glossary::TermId;
use crate::index::{SearchHit, TermIndex};
use crate::stream::{window_audio, windows_for_chunk, Chunk, SpeechStream, StreamError};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("window ending at {window_end_s}s: {source}")]
    Embed {
        window_end_s: f64,
        #[source]
        source: crate::embedding::EmbedError,
    },
    #[error("window ending at {window_end_s}s: {source}")]
    Search {
        window_end_s: f64,
        #[source]
        source: crate::index::IndexError,
    },
}

/// One retrieved term with the end time of the window that contributed its
/// best score, kept for tracing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub term_id: TermId,
    pub score: f32,
    pub window_end_s: f64,
}

/// The ranked, deduplicated terminology set attached to one chunk: at most
/// `k2` hits, scores non-increasing, term ids unique.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub chunk_index: u32,
    pub hits: Vec<RetrievalHit>,
}

impl RetrievedSet {
    pub fn term_ids(&self) -> impl Iterator<Item = TermId> + '_ {
        self.hits.iter().map(|h| h.term_id)
    }

    pub fn contains(&self, id: TermId) -> bool {
        self.hits.iter().any(|h| h.term_id == id)
    }
}

/// Sliding-window retrieval parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrieveParams {
    pub window_s: f64,
    pub stride_s: f64,
    pub k1: usize,
    pub k2: usize,
}

/// A retrieved set plus the wall time spent producing it (embedding, search,
/// and aggregation), for overhead reporting.
#[derive(Clone, Debug)]
pub struct TimedRetrieval {
    pub set: RetrievedSet,
    pub retriever_ms: f64,
}

/// Deduplicates ranked per-window hit lists: per term the maximum score wins
/// (earlier window on an exact tie), then hits are ordered by descending
/// score with ascending term id as the tie break and truncated to `k2`.
pub fn aggregate(
    per_window: &[(f64, Vec<SearchHit>)],
    k2: usize,
    chunk_index: u32,
) -> RetrievedSet {
    let mut best: HashMap<TermId, (f32, f64)> = HashMap::new();
    for (window_end_s, hits) in per_window {
        for hit in hits {
            match best.get(&hit.term_id) {
                Some((score, _)) if *score >= hit.score => {}
                _ => {
                    best.insert(hit.term_id, (hit.score, *window_end_s));
                }
            }
        }
    }
    let mut hits: Vec<RetrievalHit> = best
        .into_iter()
        .map(|(term_id, (score, window_end_s))| RetrievalHit {
            term_id,
            score,
            window_end_s,
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(a.term_id.cmp(&b.term_id))
    });
    hits.truncate(k2);
    RetrievedSet { chunk_index, hits }
}

/// Runs sliding-window retrieval for one chunk and aggregates the results.
pub fn retrieve_for_chunk(
    index: &TermIndex,
    provider: &dyn EmbeddingProvider,
    stream: &SpeechStream,
    chunk: &Chunk,
    params: &RetrieveParams,
    clock: &dyn Clock,
) -> Result<TimedRetrieval, RetrieveError> {
    let started_ms = clock.now_ms();
    let windows = windows_for_chunk(
        chunk.index,
        chunk.nominal_s,
        params.window_s,
        params.stride_s,
        stream.duration_s(),
    )?;
    let mut per_window = Vec::with_capacity(windows.len());
    for window in &windows {
        let audio = window_audio(stream, window, params.window_s);
        let query = provider
            .embed_window(&audio)
            .map_err(|source| RetrieveError::Embed {
                window_end_s: window.end_s,
                source,
            })?;
        let hits = index
            .search(&query, params.k1)
            .map_err(|source| RetrieveError::Search {
                window_end_s: window.end_s,
                source,
            })?;
        per_window.push((window.end_s, hits));
    }
    let set = aggregate(&per_window, params.k2, chunk.index);
    Ok(TimedRetrieval {
        set,
        retriever_ms: clock.now_ms() - started_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NullClock;
    use crate::embedding::MockProvider;
    use crate::glossary::Glossary;
    use crate::index::build_index;
    use crate::lang::Lang;
    use crate::stream::{chunk_stream, TARGET_RATE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn glossary_of(n: usize) -> Glossary {
        let zh = Lang::new("zh");
        let pairs: Vec<_> = (0..n)
            .map(|i| {
                (
                    format!("term{i}"),
                    [(zh.clone(), format!("词{i}"))].into_iter().collect(),
                )
            })
            .collect();
        Glossary::from_pairs(pairs, &[zh]).unwrap()
    }

    fn noisy_stream(duration_s: f64, seed: u64) -> SpeechStream {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = (duration_s * TARGET_RATE as f64).round() as usize;
        SpeechStream::new(
            (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            TARGET_RATE,
        )
        .unwrap()
    }

    fn hit(term: u32, score: f32, end: f64) -> SearchHit {
        let _ = end;
        SearchHit {
            term_id: TermId(term),
            score,
        }
    }

    #[test]
    fn empty_glossary_retrieves_nothing() {
        let index = build_index(glossary_of(0), &MockProvider::new(1, 8)).unwrap();
        let stream = noisy_stream(2.0, 1);
        let chunks = chunk_stream(&stream, 1.92).unwrap();
        let params = RetrieveParams {
            window_s: 1.92,
            stride_s: 0.48,
            k1: 10,
            k2: 10,
        };
        let out =
            retrieve_for_chunk(&index, &MockProvider::new(1, 8), &stream, &chunks[0], &params, &NullClock)
                .unwrap();
        assert!(out.set.hits.is_empty());
    }

    #[test]
    fn paper_defaults_bound_candidates() {
        let index = build_index(glossary_of(100), &MockProvider::new(2, 16)).unwrap();
        let stream = noisy_stream(5.0, 2);
        let chunks = chunk_stream(&stream, 1.92).unwrap();
        let params = RetrieveParams {
            window_s: 1.92,
            stride_s: 0.48,
            k1: 10,
            k2: 10,
        };
        let provider = MockProvider::new(2, 16);
        let out =
            retrieve_for_chunk(&index, &provider, &stream, &chunks[1], &params, &NullClock).unwrap();
        assert!(out.set.hits.len() <= 10);
        assert!(!out.set.hits.is_empty());
        // Unique ids, non-increasing scores.
        let mut seen = std::collections::HashSet::new();
        for h in &out.set.hits {
            assert!(seen.insert(h.term_id));
        }
        for pair in out.set.hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn max_score_wins_across_windows() {
        let per_window = vec![
            (0.48, vec![hit(5, 0.8, 0.48)]),
            (0.96, vec![hit(5, 0.9, 0.96)]),
        ];
        let set = aggregate(&per_window, 10, 1);
        assert_eq!(set.hits.len(), 1);
        assert_eq!(set.hits[0].term_id, TermId(5));
        assert_eq!(set.hits[0].score, 0.9);
        assert_eq!(set.hits[0].window_end_s, 0.96);
    }

    #[test]
    fn single_window_aggregation_is_identity_prefix() {
        let inner = vec![hit(1, 0.9, 0.5), hit(4, 0.7, 0.5), hit(2, 0.6, 0.5)];
        let set = aggregate(&[(0.5, inner.clone())], 2, 3);
        assert_eq!(set.chunk_index, 3);
        assert_eq!(
            set.hits
                .iter()
                .map(|h| (h.term_id, h.score))
                .collect::<Vec<_>>(),
            vec![(TermId(1), 0.9), (TermId(4), 0.7)]
        );
    }

    #[test]
    fn hand_built_three_window_fixture() {
        // Hand-computed dedup/sort/truncate table:
        //   term 1: max 0.9 (window 0.48)
        //   term 2: max 0.85 (window 1.44; 0.85 > 0.8 from window 0.96)
        //   term 3: 0.85 (window 0.96) -> tie with term 2 broken by id
        //   term 4: 0.5 (window 1.44)
        // k2 = 3 keeps terms 1, 2, 3.
        let per_window = vec![
            (0.48, vec![hit(1, 0.9, 0.48), hit(2, 0.4, 0.48)]),
            (0.96, vec![hit(3, 0.85, 0.96), hit(2, 0.8, 0.96)]),
            (1.44, vec![hit(2, 0.85, 1.44), hit(4, 0.5, 1.44)]),
        ];
        let set = aggregate(&per_window, 3, 1);
        let got: Vec<(u32, f32, f64)> = set
            .hits
            .iter()
            .map(|h| (h.term_id.0, h.score, h.window_end_s))
            .collect();
        assert_eq!(
            got,
            vec![(1, 0.9, 0.48), (2, 0.85, 1.44), (3, 0.85, 0.96)]
        );
    }

    #[test]
    fn exact_tie_keeps_earlier_window() {
        let per_window = vec![
            (0.48, vec![hit(9, 0.75, 0.48)]),
            (0.96, vec![hit(9, 0.75, 0.96)]),
        ];
        let set = aggregate(&per_window, 5, 1);
        assert_eq!(set.hits[0].window_end_s, 0.48);
    }

    #[test]
    fn empty_input_aggregates_to_empty() {
        let set = aggregate(&[], 10, 2);
        assert!(set.hits.is_empty());
        assert_eq!(set.chunk_index, 2);
    }

    /// Brute-force oracle: score every (window, term) pair directly, apply
    /// per-window top-k1 (full sort by (-score, id)), then per-term max over
    /// the chunk's windows, final (-score, id) sort, truncate to k2.
    fn brute_force_chunk(
        index: &TermIndex,
        provider: &dyn EmbeddingProvider,
        stream: &SpeechStream,
        chunk: &Chunk,
        params: &RetrieveParams,
    ) -> RetrievedSet {
        let windows = windows_for_chunk(
            chunk.index,
            chunk.nominal_s,
            params.window_s,
            params.stride_s,
            stream.duration_s(),
        )
        .unwrap();
        let mut best: Vec<Option<(f32, f64)>> = vec![None; index.len()];
        for w in &windows {
            let audio = window_audio(stream, w, params.window_s);
            let q = provider.embed_window(&audio).unwrap();
            let mut scored: Vec<(u32, f32)> = (0..index.len() as u32)
                .map(|i| {
                    let mut s = 0.0f32;
                    for (a, b) in index.vector(TermId(i)).iter().zip(&q) {
                        s += a * b;
                    }
                    (i, s)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(params.k1);
            for (id, score) in scored {
                let slot = &mut best[id as usize];
                match slot {
                    Some((s, _)) if *s >= score => {}
                    _ => *slot = Some((score, w.end_s)),
                }
            }
        }
        let mut hits: Vec<RetrievalHit> = best
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| {
                slot.map(|(score, window_end_s)| RetrievalHit {
                    term_id: TermId(i as u32),
                    score,
                    window_end_s,
                })
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.term_id.cmp(&b.term_id))
        });
        hits.truncate(params.k2);
        RetrievedSet {
            chunk_index: chunk.index,
            hits,
        }
    }

    #[test]
    fn matches_brute_force_on_random_audio() {
        let index = build_index(glossary_of(200), &MockProvider::new(3, 12)).unwrap();
        let provider = MockProvider::new(3, 12);
        let stream = noisy_stream(7.3, 5);
        let params = RetrieveParams {
            window_s: 1.92,
            stride_s: 0.48,
            k1: 7,
            k2: 9,
        };
        for chunk in chunk_stream(&stream, 1.92).unwrap() {
            let got = retrieve_for_chunk(&index, &provider, &stream, &chunk, &params, &NullClock)
                .unwrap()
                .set;
            let want = brute_force_chunk(&index, &provider, &stream, &chunk, &params);
            assert_eq!(got, want, "chunk {}", chunk.index);
        }
    }

    #[test]
    fn growing_k2_extends_the_same_prefix() {
        let index = build_index(glossary_of(80), &MockProvider::new(8, 8)).unwrap();
        let provider = MockProvider::new(8, 8);
        let stream = noisy_stream(4.0, 9);
        let chunk = chunk_stream(&stream, 1.92).unwrap()[1];
        let run = |k2: usize| {
            let params = RetrieveParams {
                window_s: 1.92,
                stride_s: 0.48,
                k1: 10,
                k2,
            };
            retrieve_for_chunk(&index, &provider, &stream, &chunk, &params, &NullClock)
                .unwrap()
                .set
        };
        let small = run(5);
        let large = run(12);
        assert_eq!(&large.hits[..small.hits.len()], &small.hits[..]);
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let index = build_index(glossary_of(60), &MockProvider::new(4, 8)).unwrap();
        let provider = MockProvider::new(4, 8);
        let stream = noisy_stream(3.0, 11);
        let chunk = chunk_stream(&stream, 0.96).unwrap()[2];
        let params = RetrieveParams {
            window_s: 1.92,
            stride_s: 0.48,
            k1: 10,
            k2: 10,
        };
        let a = retrieve_for_chunk(&index, &provider, &stream, &chunk, &params, &NullClock)
            .unwrap()
            .set;
        let b = retrieve_for_chunk(&index, &provider, &stream, &chunk, &params, &NullClock)
            .unwrap()
            .set;
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }
}
