//! Scoring of streaming hypotheses: resegmentation against references,
//! length-adaptive average lagging, corpus BLEU, terminology accuracy,
//! retrieval recall, and retriever/policy overhead.
//!
//! Latency and quality share one tokenization so the numbers stay
//! comparable: word-level splitting for space-delimited languages, character
//! level for zh/ja.

use crate::glossary::TermId;
use crate::lang::Lang;
use crate::retriever::RetrievedSet;
use crate::stream::windows_for_chunk;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference list is empty")]
    EmptyReferences,
    #[error("references must be ordered and non-overlapping in time: {0}")]
    BadReferences(String),
    #[error("segment {0} has non-positive source duration")]
    BadSegmentDuration(usize),
    #[error("term-occurrence list is empty; the metric is undefined")]
    EmptyOccurrences,
    #[error("gold occurrence list is empty; recall is undefined")]
    EmptyGold,
    #[error("k must be at least 1")]
    BadK,
    #[error("window-tolerant recall needs span times on every occurrence")]
    MissingSpan,
    #[error("policy time total is zero; overhead ratio is undefined")]
    ZeroDenominator,
    #[error("failed to read {path}: {msg}")]
    Read { path: String, msg: String },
    #[error(transparent)]
    Stream(#[from] crate::stream::StreamError),
}

/// Unit of token comparison for BLEU, resegmentation, and term matching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    Word,
    Char,
}

impl Tokenization {
    pub fn for_lang(lang: &Lang) -> Self {
        if lang.char_tokenized() {
            Tokenization::Char
        } else {
            Tokenization::Word
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Word => text.split_whitespace().map(str::to_string).collect(),
            Tokenization::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
        }
    }

    /// Rebuilds comparable text from units: spaced for words, joined for
    /// characters (zh/ja are matched without spaces).
    pub fn join(&self, units: &[String]) -> String {
        match self {
            Tokenization::Word => units.join(" "),
            Tokenization::Char => units.concat(),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Tokenization::Word => "word",
            Tokenization::Char => "char",
        }
    }
}

/// One reference sentence with its source-side time span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSegment {
    pub index: usize,
    pub source_text: String,
    pub target_text: String,
    pub source_start_s: f64,
    pub source_end_s: f64,
}

/// A hypothesis token with the delay assigned at emission time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypToken {
    pub text: String,
    pub delay_s: f64,
}

/// The hypothesis slice assigned to one reference segment, as tokenized
/// units in emission order.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub segment_index: usize,
    pub units: Vec<HypToken>,
    pub edit_distance: usize,
}

fn validate_references(refs: &[ReferenceSegment]) -> Result<(), MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    for pair in refs.windows(2) {
        if pair[1].source_start_s < pair[0].source_end_s - 1e-9 {
            return Err(MetricsError::BadReferences(format!(
                "segment {} starts at {} before segment {} ends at {}",
                pair[1].index, pair[1].source_start_s, pair[0].index, pair[0].source_end_s
            )));
        }
    }
    Ok(())
}

fn levenshtein(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            current[j + 1] = sub.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// Two-bit move matrix for the resegmentation DP backtrack.
struct Moves {
    cols: usize,
    data: Vec<u8>,
}

const MOVE_DIAG: u8 = 0;
const MOVE_UP: u8 = 1; // consumed a hypothesis unit (insertion)
const MOVE_LEFT: u8 = 2; // consumed a reference unit (deletion)

impl Moves {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            data: vec![0u8; (rows * cols).div_ceil(4)],
        }
    }

    fn set(&mut self, r: usize, c: usize, value: u8) {
        let at = r * self.cols + c;
        let shift = (at % 4) * 2;
        self.data[at / 4] = (self.data[at / 4] & !(0b11 << shift)) | (value << shift);
    }

    fn get(&self, r: usize, c: usize) -> u8 {
        let at = r * self.cols + c;
        (self.data[at / 4] >> ((at % 4) * 2)) & 0b11
    }
}

/// Partitions the hypothesis tokens into contiguous per-segment slices
/// minimizing the total token-level edit distance to the references.
///
/// Implemented as one Levenshtein alignment of the hypothesis units against
/// the concatenated reference units; the optimal cut points are where the
/// backtracked path crosses reference boundaries, which yields exactly the
/// minimum over all contiguous partitions of the per-segment distance sum.
pub fn resegment(
    hyp: &[HypToken],
    refs: &[ReferenceSegment],
    tok: Tokenization,
) -> Result<Vec<AlignedPair>, MetricsError> {
    validate_references(refs)?;

    // Re-tokenize hypothesis tokens into units; each unit keeps its token's delay.
    let units: Vec<HypToken> = hyp
        .iter()
        .flat_map(|t| {
            tok.tokenize(&t.text).into_iter().map(move |text| HypToken {
                text,
                delay_s: t.delay_s,
            })
        })
        .collect();
    let ref_units: Vec<Vec<String>> = refs.iter().map(|r| tok.tokenize(&r.target_text)).collect();
    let boundaries: Vec<usize> = ref_units
        .iter()
        .scan(0usize, |acc, u| {
            *acc += u.len();
            Some(*acc)
        })
        .collect();
    let flat_refs: Vec<&String> = ref_units.iter().flatten().collect();

    let n = units.len();
    let t = flat_refs.len();
    let mut moves = Moves::new(n + 1, t + 1);
    let mut prev: Vec<u32> = (0..=t as u32).collect();
    for j in 1..=t {
        moves.set(0, j, MOVE_LEFT);
    }
    let mut current = vec![0u32; t + 1];
    for i in 1..=n {
        current[0] = i as u32;
        moves.set(i, 0, MOVE_UP);
        for j in 1..=t {
            let diag = prev[j - 1] + u32::from(units[i - 1].text != *flat_refs[j - 1]);
            let up = prev[j] + 1;
            let left = current[j - 1] + 1;
            let (cost, mv) = if diag <= up && diag <= left {
                (diag, MOVE_DIAG)
            } else if up <= left {
                (up, MOVE_UP)
            } else {
                (left, MOVE_LEFT)
            };
            current[j] = cost;
            moves.set(i, j, mv);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    let total = prev[t] as usize;

    // Backtrack, then scan the path forward to place one cut per internal
    // reference boundary at the first row reaching that column.
    let mut path = Vec::with_capacity(n + t + 1);
    let (mut r, mut c) = (n, t);
    path.push((r, c));
    while r > 0 || c > 0 {
        match moves.get(r, c) {
            MOVE_DIAG => {
                r -= 1;
                c -= 1;
            }
            MOVE_UP => r -= 1,
            _ => c -= 1,
        }
        path.push((r, c));
    }
    path.reverse();
    let mut cuts = vec![n; refs.len().saturating_sub(1)];
    for (seg, boundary) in boundaries[..refs.len() - 1].iter().enumerate() {
        for &(row, col) in &path {
            if col >= *boundary {
                cuts[seg] = row;
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(refs.len());
    let mut start = 0usize;
    for (seg, reference) in refs.iter().enumerate() {
        let end = cuts.get(seg).copied().unwrap_or(n);
        let slice = units[start..end].to_vec();
        let slice_texts: Vec<String> = slice.iter().map(|u| u.text.clone()).collect();
        pairs.push(AlignedPair {
            segment_index: reference.index,
            units: slice,
            edit_distance: levenshtein(&slice_texts, &ref_units[seg]),
        });
        start = end;
    }
    debug_assert_eq!(
        pairs.iter().map(|p| p.edit_distance).sum::<usize>(),
        total,
        "per-segment distances must sum to the DP optimum"
    );
    Ok(pairs)
}

/// Length-adaptive average lagging for one segment, in seconds. Returns
/// `None` for an empty hypothesis slice (the segment is excluded from the
/// latency average and counted separately).
pub fn laal(
    pair: &AlignedPair,
    segment: &ReferenceSegment,
    tok: Tokenization,
) -> Result<Option<f64>, MetricsError> {
    let t_src = segment.source_end_s - segment.source_start_s;
    if t_src.is_nan() || t_src <= 0.0 {
        return Err(MetricsError::BadSegmentDuration(segment.index));
    }
    if pair.units.is_empty() {
        return Ok(None);
    }
    let hyp_len = pair.units.len();
    let ref_len = tok.tokenize(&segment.target_text).len();
    let denom = hyp_len.max(ref_len) as f64;
    let delays: Vec<f64> = pair
        .units
        .iter()
        .map(|u| u.delay_s - segment.source_start_s)
        .collect();
    let cutoff = delays
        .iter()
        .position(|d| *d >= t_src)
        .map(|p| p + 1)
        .unwrap_or(hyp_len);
    let sum: f64 = delays[..cutoff]
        .iter()
        .enumerate()
        .map(|(j, d)| d - j as f64 * t_src / denom)
        .sum();
    Ok(Some(sum / cutoff as f64))
}

/// Zero-match handling for BLEU n-gram precisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuSmoothing {
    /// mteval-style: each zero-count order divides a doubling smoother.
    Exp,
    /// No smoothing; any zero-count order zeroes the score.
    None,
}

impl BleuSmoothing {
    pub fn id(&self) -> &'static str {
        match self {
            BleuSmoothing::Exp => "exp",
            BleuSmoothing::None => "none",
        }
    }
}

const BLEU_ORDER: usize = 4;

fn ngram_counts(units: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if units.len() >= n {
        for gram in units.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over aligned hypothesis/reference segment texts: geometric
/// mean of clipped 1..4-gram precisions with the brevity penalty.
pub fn bleu_with(
    hyp_segments: &[String],
    ref_segments: &[String],
    tok: Tokenization,
    smoothing: BleuSmoothing,
) -> f64 {
    assert_eq!(
        hyp_segments.len(),
        ref_segments.len(),
        "hypothesis and reference corpora must pair up"
    );
    let mut correct = [0u64; BLEU_ORDER];
    let mut total = [0u64; BLEU_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp_text, ref_text) in hyp_segments.iter().zip(ref_segments) {
        let hyp_units = tok.tokenize(hyp_text);
        let ref_units = tok.tokenize(ref_text);
        hyp_len += hyp_units.len() as u64;
        ref_len += ref_units.len() as u64;
        for n in 1..=BLEU_ORDER {
            if hyp_units.len() < n {
                continue;
            }
            let hyp_grams = ngram_counts(&hyp_units, n);
            let ref_grams = ngram_counts(&ref_units, n);
            total[n - 1] += (hyp_units.len() - n + 1) as u64;
            for (gram, count) in hyp_grams {
                let clip = ref_grams.get(gram).copied().unwrap_or(0);
                correct[n - 1] += count.min(clip);
            }
        }
    }
    if hyp_len == 0 || total.contains(&0) {
        return 0.0;
    }
    let mut log_precision_sum = 0.0f64;
    let mut smoother = 1.0f64;
    for n in 0..BLEU_ORDER {
        let precision = if correct[n] > 0 {
            correct[n] as f64 / total[n] as f64
        } else {
            match smoothing {
                BleuSmoothing::None => return 0.0,
                BleuSmoothing::Exp => {
                    smoother *= 2.0;
                    1.0 / (smoother * total[n] as f64)
                }
            }
        };
        log_precision_sum += precision.ln();
    }
    let brevity_penalty = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    100.0 * brevity_penalty * (log_precision_sum / BLEU_ORDER as f64).exp()
}

pub fn bleu(hyp_segments: &[String], ref_segments: &[String], tok: Tokenization) -> f64 {
    bleu_with(hyp_segments, ref_segments, tok, BleuSmoothing::Exp)
}

/// One expected terminology hit: the reference translation of a term should
/// appear in the hypothesis slice paired with its segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermOccurrence {
    pub segment_index: usize,
    pub target_term: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TermAccuracy {
    pub per_occurrence: f64,
    /// Fraction of distinct terms matched in at least one of their
    /// occurrences.
    pub per_unique_term: f64,
    pub correct: usize,
    pub total: usize,
}

fn normalize_for_match(text: &str, tok: Tokenization) -> String {
    tok.join(&tok.tokenize(text))
}

/// Fraction of occurrences whose target term text is a substring of the
/// paired hypothesis slice after whitespace normalization (zh/ja are
/// compared without spaces).
pub fn term_accuracy(
    pairs: &[AlignedPair],
    occurrences: &[TermOccurrence],
    tok: Tokenization,
) -> Result<TermAccuracy, MetricsError> {
    if occurrences.is_empty() {
        return Err(MetricsError::EmptyOccurrences);
    }
    let slice_text: HashMap<usize, String> = pairs
        .iter()
        .map(|p| {
            let units: Vec<String> = p.units.iter().map(|u| u.text.clone()).collect();
            (p.segment_index, tok.join(&units))
        })
        .collect();
    let mut correct = 0usize;
    let mut unique: BTreeMap<String, bool> = BTreeMap::new();
    for occurrence in occurrences {
        let needle = normalize_for_match(&occurrence.target_term, tok);
        let hit = slice_text
            .get(&occurrence.segment_index)
            .is_some_and(|text| !needle.is_empty() && text.contains(&needle));
        correct += usize::from(hit);
        let entry = unique.entry(needle).or_insert(false);
        *entry |= hit;
    }
    Ok(TermAccuracy {
        per_occurrence: correct as f64 / occurrences.len() as f64,
        per_unique_term: unique.values().filter(|v| **v).count() as f64 / unique.len() as f64,
        correct,
        total: occurrences.len(),
    })
}

/// A gold retrieval target: term `term_id` should be retrieved for this
/// chunk; `span` carries the term's source time span when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldOccurrence {
    pub chunk_index: u32,
    pub term_id: TermId,
    pub span: Option<(f64, f64)>,
}

/// Which chunks may satisfy a gold occurrence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecallMode {
    /// The stated chunk only.
    ExactChunk,
    /// Any chunk one of whose retrieval windows fully contains the span.
    WindowTolerant {
        chunk_s: f64,
        window_s: f64,
        stride_s: f64,
        duration_s: f64,
    },
}

/// Fraction of gold occurrences whose term appears among the top-k retrieved
/// candidates of an eligible chunk.
pub fn recall_at_k(
    sets: &[RetrievedSet],
    gold: &[GoldOccurrence],
    k: usize,
    mode: RecallMode,
) -> Result<f64, MetricsError> {
    if k < 1 {
        return Err(MetricsError::BadK);
    }
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let by_chunk: HashMap<u32, &RetrievedSet> = sets.iter().map(|s| (s.chunk_index, s)).collect();
    let in_top_k = |chunk: u32, term: TermId| -> bool {
        by_chunk
            .get(&chunk)
            .is_some_and(|set| set.hits.iter().take(k).any(|h| h.term_id == term))
    };
    let mut found = 0usize;
    for occurrence in gold {
        let hit = match mode {
            RecallMode::ExactChunk => in_top_k(occurrence.chunk_index, occurrence.term_id),
            RecallMode::WindowTolerant {
                chunk_s,
                window_s,
                stride_s,
                duration_s,
            } => {
                let (start, end) = occurrence.span.ok_or(MetricsError::MissingSpan)?;
                let chunk_count = (duration_s / chunk_s).ceil() as u32;
                let mut any = false;
                for chunk in 1..=chunk_count.max(1) {
                    let windows =
                        windows_for_chunk(chunk, chunk_s, window_s, stride_s, duration_s)?;
                    let contains = windows
                        .iter()
                        .any(|w| w.start_s - 1e-9 <= start && end <= w.end_s + 1e-9);
                    if contains && in_top_k(chunk, occurrence.term_id) {
                        any = true;
                        break;
                    }
                }
                any
            }
        };
        found += usize::from(hit);
    }
    Ok(found as f64 / gold.len() as f64)
}

/// Retriever runtime as a fraction of policy decoding time.
pub fn overhead_ratio(retriever_ms_total: f64, policy_ms_total: f64) -> Result<f64, MetricsError> {
    if policy_ms_total.is_nan() || policy_ms_total <= 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(retriever_ms_total / policy_ms_total)
}

pub const METRIC_REPORT_SCHEMA: &str = "metric-report/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentReport {
    pub index: usize,
    pub ref_tokens: usize,
    pub hyp_tokens: usize,
    pub edit_distance: usize,
    pub laal_s: Option<f64>,
}

/// Aggregate scores for one evaluated run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub bleu: f64,
    pub bleu_smoothing: String,
    pub tokenization: String,
    pub term_accuracy: f64,
    pub term_accuracy_unique: f64,
    pub term_occurrences: usize,
    /// Mean LAAL over segments with non-empty hypothesis slices.
    pub stream_laal_s: Option<f64>,
    pub segments_scored: usize,
    pub segments_empty: usize,
    pub recall_at_k: Option<f64>,
    pub recall_k: Option<usize>,
    pub overhead_ratio: Option<f64>,
    pub per_segment: Vec<SegmentReport>,
}

impl MetricReport {
    pub fn per_segment_csv(&self) -> String {
        let mut out = String::from("index,ref_tokens,hyp_tokens,edit_distance,laal_s\n");
        for seg in &self.per_segment {
            let laal = seg.laal_s.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                seg.index, seg.ref_tokens, seg.hyp_tokens, seg.edit_distance, laal
            );
        }
        out
    }
}

/// Scores a hypothesis stream against references; the building block behind
/// the `evaluate` subcommand.
pub fn score_stream(
    hyp: &[HypToken],
    refs: &[ReferenceSegment],
    occurrences: &[TermOccurrence],
    tok: Tokenization,
    smoothing: BleuSmoothing,
) -> Result<(MetricReport, Vec<AlignedPair>), MetricsError> {
    let pairs = resegment(hyp, refs, tok)?;
    let hyp_texts: Vec<String> = pairs
        .iter()
        .map(|p| {
            let units: Vec<String> = p.units.iter().map(|u| u.text.clone()).collect();
            tok.join(&units)
        })
        .collect();
    let ref_texts: Vec<String> = refs.iter().map(|r| r.target_text.clone()).collect();
    let bleu_score = bleu_with(&hyp_texts, &ref_texts, tok, smoothing);
    let accuracy = term_accuracy(&pairs, occurrences, tok)?;

    let mut per_segment = Vec::with_capacity(refs.len());
    let mut laal_sum = 0.0;
    let mut scored = 0usize;
    let mut empty = 0usize;
    for (pair, segment) in pairs.iter().zip(refs) {
        let laal_s = laal(pair, segment, tok)?;
        match laal_s {
            Some(v) => {
                laal_sum += v;
                scored += 1;
            }
            None => empty += 1,
        }
        per_segment.push(SegmentReport {
            index: segment.index,
            ref_tokens: tok.tokenize(&segment.target_text).len(),
            hyp_tokens: pair.units.len(),
            edit_distance: pair.edit_distance,
            laal_s,
        });
    }
    let report = MetricReport {
        schema: METRIC_REPORT_SCHEMA.into(),
        bleu: bleu_score,
        bleu_smoothing: smoothing.id().into(),
        tokenization: tok.id().into(),
        term_accuracy: accuracy.per_occurrence,
        term_accuracy_unique: accuracy.per_unique_term,
        term_occurrences: accuracy.total,
        stream_laal_s: (scored > 0).then(|| laal_sum / scored as f64),
        segments_scored: scored,
        segments_empty: empty,
        recall_at_k: None,
        recall_k: None,
        overhead_ratio: None,
        per_segment,
    };
    Ok((report, pairs))
}

pub fn read_references(path: &Path) -> Result<Vec<ReferenceSegment>, MetricsError> {
    read_jsonl(path)
}

pub fn read_occurrences(path: &Path) -> Result<Vec<TermOccurrence>, MetricsError> {
    read_jsonl(path)
}

pub fn read_gold_occurrences(path: &Path) -> Result<Vec<GoldOccurrence>, MetricsError> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Read {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| MetricsError::Read {
                path: path.display().to_string(),
                msg: format!("line {}: {e}", i + 1),
            })?,
        );
    }
    Ok(out)
}
