//! Training-data synthesis: (speech window, positive terms) pairs for the
//! retriever, and per-chunk term maps under the Standard / None / All-Wrong
//! patterns with budgeted negatives for policy training.
//!
//! Alignment and phrase files are consumed, not produced; running a forced
//! aligner or a syntactic parser is outside this crate.

use crate::glossary::{Glossary, TermId};
use crate::index::TermIndex;
use crate::lang::Lang;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("{0} gold terms exceed the {TERM_MAP_BUDGET}-entry map budget")]
    GoldExceedsBudget(usize),
    #[error("negatives source exhausted: cannot build an all-wrong map")]
    ExhaustedNegatives,
    #[error("term {term:?} has no {lang} translation")]
    MissingTranslation { term: String, lang: Lang },
    #[error("bad span: {0}")]
    BadSpan(String),
    #[error("failed to read {path}: {msg}")]
    Read { path: String, msg: String },
}

/// One word of a forced alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedWord {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// A normalized noun-phrase surface form with its source time span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl PhraseSpan {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|e| SynthError::Read {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| SynthError::Read {
            path: path.display().to_string(),
            msg: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Reads one utterance's word alignment, validating span sanity and order.
pub fn read_alignment(path: &Path) -> Result<Vec<AlignedWord>, SynthError> {
    let words: Vec<AlignedWord> = read_jsonl(path)?;
    for w in &words {
        if !(w.start_s >= 0.0 && w.end_s > w.start_s) {
            return Err(SynthError::BadSpan(format!(
                "word {:?} spans [{}, {}]",
                w.word, w.start_s, w.end_s
            )));
        }
    }
    for pair in words.windows(2) {
        if pair[1].start_s < pair[0].start_s {
            return Err(SynthError::BadSpan(format!(
                "words out of order at {:?}",
                pair[1].word
            )));
        }
    }
    Ok(words)
}

pub fn read_phrases(path: &Path) -> Result<Vec<PhraseSpan>, SynthError> {
    let phrases: Vec<PhraseSpan> = read_jsonl(path)?;
    for p in &phrases {
        if !(p.start_s >= 0.0 && p.end_s > p.start_s) {
            return Err(SynthError::BadSpan(format!(
                "phrase {:?} spans [{}, {}]",
                p.text, p.start_s, p.end_s
            )));
        }
    }
    Ok(phrases)
}

/// Canonical phrase surface form: per-token edge punctuation stripped,
/// whitespace collapsed, lowercased except all-caps acronym tokens.
pub fn normalize_phrase(text: &str) -> String {
    text.split_whitespace()
        .filter_map(|token| {
            let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            let is_acronym = trimmed.len() >= 2
                && trimmed.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
                && trimmed.chars().any(|c| c.is_ascii_uppercase());
            Some(if is_acronym {
                trimmed.to_string()
            } else {
                trimmed.to_lowercase()
            })
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Retriever supervision grid defaults.
pub const PAIR_WINDOW_S: f64 = 1.92;
pub const PAIR_STRIDE_S: f64 = 0.96;

/// One (window, positive phrases) supervision pair. Windows with no
/// positives are kept: they serve as null/negative windows downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    pub start_s: f64,
    pub end_s: f64,
    pub positives: Vec<String>,
}

/// Slides a `window_s` window with `stride_s` stride over the utterance and
/// pairs it with every phrase whose span falls entirely inside.
pub fn pair_windows(
    alignment: &[AlignedWord],
    phrases: &[PhraseSpan],
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<WindowPair>, SynthError> {
    if window_s.is_nan() || window_s <= 0.0 || stride_s.is_nan() || stride_s <= 0.0 {
        return Err(SynthError::BadSpan(
            "window and stride must be positive".into(),
        ));
    }
    let duration_s = alignment
        .iter()
        .map(|w| w.end_s)
        .fold(0.0f64, f64::max);
    for p in phrases {
        if p.end_s > duration_s + 1e-9 {
            return Err(SynthError::BadSpan(format!(
                "phrase {:?} ends at {} beyond the utterance end {}",
                p.text, p.end_s, duration_s
            )));
        }
    }
    let mut pairs = Vec::new();
    let mut k = 0u64;
    while (k as f64) * stride_s < duration_s {
        let start_s = k as f64 * stride_s;
        let end_s = start_s + window_s;
        let positives = phrases
            .iter()
            .filter(|p| start_s - 1e-9 <= p.start_s && p.end_s <= end_s + 1e-9)
            .map(|p| p.text.clone())
            .collect();
        pairs.push(WindowPair {
            start_s,
            end_s,
            positives,
        });
        k += 1;
    }
    Ok(pairs)
}

fn tokens_of(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn contains_subsequence(longer: &[&str], shorter: &[&str]) -> bool {
    shorter.len() < longer.len()
        && longer
            .windows(shorter.len().max(1))
            .any(|window| window == shorter)
}

/// Removes exact duplicate texts (keeping the first) and any phrase whose
/// text is a word-boundary strict substring of a longer multi-word phrase in
/// the same clip. Idempotent.
pub fn dedup_candidates(phrases: &[PhraseSpan]) -> Vec<PhraseSpan> {
    let mut seen = HashSet::new();
    let unique: Vec<&PhraseSpan> = phrases
        .iter()
        .filter(|p| seen.insert(p.text.clone()))
        .collect();
    unique
        .iter()
        .filter(|p| {
            let p_tokens = tokens_of(&p.text);
            !unique.iter().any(|q| {
                let q_tokens = tokens_of(&q.text);
                q_tokens.len() >= 2 && contains_subsequence(&q_tokens, &p_tokens)
            })
        })
        .map(|p| (*p).clone())
        .collect()
}

/// Draws the per-chunk negative count `n ~ Uniform{0, ..., floor(9 * dur)}`.
pub fn sample_negative_count(dur_s: f64, rng: &mut impl Rng) -> usize {
    debug_assert!(dur_s > 0.0, "chunk duration must be positive");
    let upper = (9.0 * dur_s).floor().max(0.0) as usize;
    rng.random_range(0..=upper)
}

/// Retrieval pattern a training chunk is synthesized under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermMapPattern {
    Standard,
    None,
    AllWrong,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermMapEntry {
    pub term: String,
    pub translation: String,
    pub is_gold: bool,
}

/// A synthesized per-chunk term map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermMapSample {
    pub chunk_index: u32,
    pub pattern: TermMapPattern,
    pub entries: Vec<TermMapEntry>,
}

/// Hard budget on the term-map size.
pub const TERM_MAP_BUDGET: usize = 20;

/// Where negative terms come from.
pub enum NegativesSource<'a> {
    /// Uniform draw from the glossary minus the excluded terms.
    Random { glossary: &'a Glossary },
    /// Nearest confusable terms by cosine against an anchor vector.
    Mined {
        index: &'a TermIndex,
        anchor: Vec<f32>,
    },
}

impl NegativesSource<'_> {
    fn draw(
        &self,
        count: usize,
        exclude: &HashSet<String>,
        rng: &mut impl Rng,
    ) -> Vec<TermId> {
        if count == 0 {
            return Vec::new();
        }
        match self {
            NegativesSource::Random { glossary } => {
                let mut candidates: Vec<TermId> = glossary
                    .entries()
                    .iter()
                    .filter(|e| !exclude.contains(&e.source_term.to_lowercase()))
                    .map(|e| e.term_id)
                    .collect();
                candidates.shuffle(rng);
                candidates.truncate(count);
                candidates
            }
            NegativesSource::Mined { index, anchor } => {
                mine_hard_negatives(index, anchor, count, exclude)
            }
        }
    }
}

/// Top-k terms by cosine to `anchor` after dropping the excluded terms
/// (case-insensitive). Works with a speech-window anchor or a term-text
/// anchor.
pub fn mine_hard_negatives(
    index: &TermIndex,
    anchor: &[f32],
    k: usize,
    exclude: &HashSet<String>,
) -> Vec<TermId> {
    let Ok(hits) = index.search(anchor, index.len()) else {
        return Vec::new();
    };
    hits.into_iter()
        .filter(|h| {
            index
                .glossary()
                .term(h.term_id)
                .is_some_and(|t| !exclude.contains(&t.to_lowercase()))
        })
        .take(k)
        .map(|h| h.term_id)
        .collect()
}

/// Builds one term map under the given pattern.
///
/// Standard keeps every gold term and fills with up to `n` sampled negatives
/// under the size budget; None is empty; All-Wrong holds at least one and at
/// most `TERM_MAP_BUDGET` negatives and no gold. Entry order is shuffled so
/// gold position carries no signal.
#[allow(clippy::too_many_arguments)]
pub fn synth_term_map(
    gold: &[TermId],
    pattern: TermMapPattern,
    dur_s: f64,
    negatives: &NegativesSource<'_>,
    glossary: &Glossary,
    lang: &Lang,
    chunk_index: u32,
    rng: &mut impl Rng,
) -> Result<TermMapSample, SynthError> {
    let entry_of = |id: TermId, is_gold: bool| -> Result<TermMapEntry, SynthError> {
        let term = glossary
            .term(id)
            .ok_or_else(|| SynthError::BadSpan(format!("term id {id} not in glossary")))?;
        let translation =
            glossary
                .translation(id, lang)
                .ok_or_else(|| SynthError::MissingTranslation {
                    term: term.to_string(),
                    lang: lang.clone(),
                })?;
        Ok(TermMapEntry {
            term: term.to_string(),
            translation: translation.to_string(),
            is_gold,
        })
    };
    let exclude: HashSet<String> = gold
        .iter()
        .filter_map(|id| glossary.term(*id))
        .map(str::to_lowercase)
        .collect();

    let mut entries = Vec::new();
    match pattern {
        TermMapPattern::None => {}
        TermMapPattern::Standard => {
            if gold.len() > TERM_MAP_BUDGET {
                return Err(SynthError::GoldExceedsBudget(gold.len()));
            }
            let n = sample_negative_count(dur_s, rng);
            let room = TERM_MAP_BUDGET - gold.len();
            for id in gold {
                entries.push(entry_of(*id, true)?);
            }
            for id in negatives.draw(n.min(room), &exclude, rng) {
                entries.push(entry_of(id, false)?);
            }
        }
        TermMapPattern::AllWrong => {
            let upper = ((9.0 * dur_s).floor().max(1.0)) as usize;
            let n = rng.random_range(1..=upper).min(TERM_MAP_BUDGET);
            let drawn = negatives.draw(n, &exclude, rng);
            if drawn.is_empty() {
                return Err(SynthError::ExhaustedNegatives);
            }
            for id in drawn {
                entries.push(entry_of(id, false)?);
            }
        }
    }
    entries.shuffle(rng);
    Ok(TermMapSample {
        chunk_index,
        pattern,
        entries,
    })
}

/// Exact order statistics over phrase span durations, with a 0.1 s
/// histogram. Feeds the window-length selection rationale.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermDurationStats {
    pub count: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p90_s: f64,
    pub p99_s: f64,
    /// (bin start in seconds, count), bins 0.1 s wide from zero.
    pub histogram: Vec<(f64, usize)>,
}

pub fn term_duration_stats(phrases: &[PhraseSpan]) -> Result<TermDurationStats, SynthError> {
    if phrases.is_empty() {
        return Err(SynthError::EmptyInput("phrase list".into()));
    }
    let mut durations: Vec<f64> = phrases.iter().map(PhraseSpan::duration_s).collect();
    durations.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    let n = durations.len();
    let nearest_rank = |q: f64| -> f64 {
        let rank = ((q / 100.0) * n as f64).ceil().max(1.0) as usize;
        durations[rank - 1]
    };
    let max = durations[n - 1];
    let bins = (max / 0.1).floor() as usize + 1;
    let mut histogram: Vec<(f64, usize)> = (0..bins).map(|b| (b as f64 * 0.1, 0)).collect();
    for d in &durations {
        let bin = ((d / 0.1).floor() as usize).min(bins - 1);
        histogram[bin].1 += 1;
    }
    Ok(TermDurationStats {
        count: n,
        mean_s: durations.iter().sum::<f64>() / n as f64,
        p50_s: nearest_rank(50.0),
        p90_s: nearest_rank(90.0),
        p99_s: nearest_rank(99.0),
        histogram,
    })
}

/// Mixing proportions for the three patterns across a synthesized set.
/// The defaults are a configuration choice, not a claim about the source
/// recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternWeights {
    pub standard: f64,
    pub none: f64,
    pub all_wrong: f64,
}

impl Default for PatternWeights {
    fn default() -> Self {
        Self {
            standard: 0.8,
            none: 0.1,
            all_wrong: 0.1,
        }
    }
}

impl PatternWeights {
    pub fn validate(&self) -> Result<(), SynthError> {
        let parts = [self.standard, self.none, self.all_wrong];
        if parts.iter().any(|w| *w < 0.0 || !w.is_finite()) || parts.iter().sum::<f64>() <= 0.0 {
            return Err(SynthError::BadSpan(
                "pattern weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TermMapPattern {
        let total = self.standard + self.none + self.all_wrong;
        let draw = rng.random_range(0.0..total);
        if draw < self.standard {
            TermMapPattern::Standard
        } else if draw < self.standard + self.none {
            TermMapPattern::None
        } else {
            TermMapPattern::AllWrong
        }
    }
}

/// Synthesizes per-chunk term maps for one utterance: phrases are chunked by
/// their span end time, matched into the glossary case-insensitively, and
/// mapped under a sampled pattern. Chunks whose All-Wrong draw cannot be
/// satisfied fall back to None rather than failing the utterance.
#[allow(clippy::too_many_arguments)]
pub fn synth_sst_term_maps(
    alignment: &[AlignedWord],
    phrases: &[PhraseSpan],
    glossary: &Glossary,
    lang: &Lang,
    chunk_s: f64,
    weights: &PatternWeights,
    negatives: &NegativesSource<'_>,
    rng: &mut impl Rng,
) -> Result<Vec<TermMapSample>, SynthError> {
    weights.validate()?;
    if chunk_s.is_nan() || chunk_s <= 0.0 {
        return Err(SynthError::BadSpan("chunk_s must be positive".into()));
    }
    let duration_s = alignment.iter().map(|w| w.end_s).fold(0.0f64, f64::max);
    if duration_s <= 0.0 {
        return Err(SynthError::EmptyInput("alignment".into()));
    }
    let chunk_count = (duration_s / chunk_s).ceil() as u32;
    let mut samples = Vec::with_capacity(chunk_count as usize);
    for chunk_index in 1..=chunk_count {
        let chunk_start = (chunk_index - 1) as f64 * chunk_s;
        let chunk_end = (chunk_index as f64 * chunk_s).min(duration_s);
        let gold: Vec<TermId> = phrases
            .iter()
            .filter(|p| p.end_s > chunk_start && p.end_s <= chunk_end + 1e-9)
            .filter_map(|p| glossary.find(&p.text))
            .collect();
        let dur = chunk_end - chunk_start;
        let pattern = weights.sample(rng);
        let sample = match synth_term_map(
            &gold, pattern, dur, negatives, glossary, lang, chunk_index, rng,
        ) {
            Ok(s) => s,
            Err(SynthError::ExhaustedNegatives) => TermMapSample {
                chunk_index,
                pattern: TermMapPattern::None,
                entries: Vec::new(),
            },
            Err(e) => return Err(e),
        };
        samples.push(sample);
    }
    Ok(samples)
}

/// Renders a term map in the same surface form the session driver uses for
/// its prompts: audio placeholder, blank line, `term_map:` header, one
/// `source=translation` line per entry.
pub fn term_map_prompt(entries: &[TermMapEntry]) -> String {
    let mut out = String::from("<audio>");
    if entries.is_empty() {
        return out;
    }
    out.push_str("\n\nterm_map:");
    for entry in entries {
        out.push('\n');
        out.push_str(&entry.term);
        out.push('=');
        out.push_str(&entry.translation);
    }
    out
}

/// Assembles one utterance's chunked training instance in the chat-message
/// shape: a system turn, then per chunk a user turn carrying the audio
/// placeholder plus term map and an assistant turn carrying the translation
/// (empty when translations are not supplied).
pub fn sst_example_json(
    utterance_id: &str,
    samples: &[TermMapSample],
    lang: &Lang,
    translations: Option<&[String]>,
    audio_prefix: &str,
) -> serde_json::Value {
    let mut messages = vec![serde_json::json!({
        "role": "system",
        "content": crate::driver::system_prompt(lang),
    })];
    let mut audios = Vec::with_capacity(samples.len());
    let mut patterns = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        messages.push(serde_json::json!({
            "role": "user",
            "content": term_map_prompt(&sample.entries),
        }));
        let translation = translations
            .and_then(|t| t.get(i))
            .cloned()
            .unwrap_or_default();
        messages.push(serde_json::json!({
            "role": "assistant",
            "content": translation,
        }));
        audios.push(format!(
            "{audio_prefix}/{utterance_id}_chunk_{:04}.wav",
            sample.chunk_index
        ));
        patterns.push(match sample.pattern {
            TermMapPattern::Standard => "Standard",
            TermMapPattern::None => "None",
            TermMapPattern::AllWrong => "AllWrong",
        });
    }
    serde_json::json!({
        "utterance": utterance_id,
        "messages": messages,
        "audios": audios,
        "patterns": patterns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockProvider;
    use crate::index::build_index;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::BTreeMap;

    fn phrase(text: &str, start_s: f64, end_s: f64) -> PhraseSpan {
        PhraseSpan {
            text: text.into(),
            start_s,
            end_s,
        }
    }

    fn words_until(end: f64) -> Vec<AlignedWord> {
        vec![AlignedWord {
            word: "w".into(),
            start_s: 0.0,
            end_s: end,
        }]
    }

    fn zh_glossary(n: usize) -> Glossary {
        let zh = Lang::new("zh");
        let pairs: Vec<_> = (0..n)
            .map(|i| {
                (
                    format!("term{i}"),
                    BTreeMap::from([(zh.clone(), format!("译{i}"))]),
                )
            })
            .collect();
        Glossary::from_pairs(pairs, &[zh]).unwrap()
    }

    #[test]
    fn contained_phrase_pairs_with_both_covering_windows() {
        let pairs = pair_windows(
            &words_until(4.0),
            &[phrase("beam search", 1.00, 1.50)],
            PAIR_WINDOW_S,
            PAIR_STRIDE_S,
        )
        .unwrap();
        let with_phrase: Vec<(f64, f64)> = pairs
            .iter()
            .filter(|p| !p.positives.is_empty())
            .map(|p| (p.start_s, p.end_s))
            .collect();
        assert_eq!(with_phrase, vec![(0.0, 1.92), (0.96, 2.88)]);
    }

    #[test]
    fn edge_crossing_phrase_is_excluded() {
        let pairs = pair_windows(
            &words_until(4.0),
            &[phrase("edge case", 1.80, 2.10)],
            PAIR_WINDOW_S,
            PAIR_STRIDE_S,
        )
        .unwrap();
        let first = &pairs[0];
        assert_eq!((first.start_s, first.end_s), (0.0, 1.92));
        assert!(first.positives.is_empty());
        assert!(!pairs[1].positives.is_empty());
    }

    #[test]
    fn zero_positive_windows_are_kept() {
        let pairs = pair_windows(&words_until(3.0), &[], PAIR_WINDOW_S, PAIR_STRIDE_S).unwrap();
        assert_eq!(pairs.len(), 4); // starts at 0.0, 0.96, 1.92, 2.88
        assert!(pairs.iter().all(|p| p.positives.is_empty()));
    }

    #[test]
    fn dedup_drops_contained_and_duplicate_phrases() {
        let survivors: Vec<String> = dedup_candidates(&[
            phrase("language model", 0.0, 0.5),
            phrase("masked language model", 1.0, 1.8),
        ])
        .into_iter()
        .map(|p| p.text)
        .collect();
        assert_eq!(survivors, vec!["masked language model"]);

        let survivors: Vec<String> =
            dedup_candidates(&[phrase("BERT", 0.0, 0.5), phrase("BERT", 1.0, 1.5)])
                .into_iter()
                .map(|p| p.text)
                .collect();
        assert_eq!(survivors, vec!["BERT"]);

        let survivors: Vec<String> = dedup_candidates(&[
            phrase("attention", 0.0, 0.4),
            phrase("self attention", 1.0, 1.7),
            phrase("graph", 2.0, 2.3),
        ])
        .into_iter()
        .map(|p| p.text)
        .collect();
        assert_eq!(survivors, vec!["self attention", "graph"]);
    }

    #[test]
    fn substring_without_word_boundary_survives() {
        let survivors = dedup_candidates(&[
            phrase("ten", 0.0, 0.4),
            phrase("attention model", 1.0, 1.7),
        ]);
        assert_eq!(survivors.len(), 2);
    }

    #[test]
    fn negative_count_support_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut saw_zero = false;
        let mut saw_max = false;
        for _ in 0..5000 {
            let n = sample_negative_count(1.92, &mut rng);
            assert!(n <= 17);
            saw_zero |= n == 0;
            saw_max |= n == 17;
        }
        assert!(saw_zero && saw_max, "both endpoints must be reachable");
        for _ in 0..1000 {
            assert!(sample_negative_count(0.96, &mut rng) <= 8);
            assert_eq!(sample_negative_count(0.05, &mut rng), 0);
        }
    }

    #[test]
    fn standard_map_keeps_gold_under_budget() {
        let glossary = zh_glossary(60);
        let gold = vec![TermId(0), TermId(1), TermId(2)];
        let negatives = NegativesSource::Random {
            glossary: &glossary,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..300 {
            let sample = synth_term_map(
                &gold,
                TermMapPattern::Standard,
                2.2, // floor(9 * 2.2) = 19 possible negatives
                &negatives,
                &glossary,
                &Lang::new("zh"),
                1,
                &mut rng,
            )
            .unwrap();
            assert!(sample.entries.len() <= TERM_MAP_BUDGET);
            let gold_terms: Vec<&str> = sample
                .entries
                .iter()
                .filter(|e| e.is_gold)
                .map(|e| e.term.as_str())
                .collect();
            assert_eq!(gold_terms.len(), 3);
            for t in ["term0", "term1", "term2"] {
                assert!(gold_terms.contains(&t));
            }
        }
    }

    #[test]
    fn none_map_is_empty() {
        let glossary = zh_glossary(10);
        let negatives = NegativesSource::Random {
            glossary: &glossary,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let sample = synth_term_map(
            &[TermId(0)],
            TermMapPattern::None,
            1.92,
            &negatives,
            &glossary,
            &Lang::new("zh"),
            1,
            &mut rng,
        )
        .unwrap();
        assert!(sample.entries.is_empty());
    }

    #[test]
    fn all_wrong_is_disjoint_from_gold() {
        let glossary = zh_glossary(40);
        let negatives = NegativesSource::Random {
            glossary: &glossary,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let gold = vec![TermId(5)];
        for _ in 0..2000 {
            let sample = synth_term_map(
                &gold,
                TermMapPattern::AllWrong,
                1.92,
                &negatives,
                &glossary,
                &Lang::new("zh"),
                1,
                &mut rng,
            )
            .unwrap();
            assert!(!sample.entries.is_empty());
            for entry in &sample.entries {
                assert!(!entry.is_gold);
                assert!(!entry.term.eq_ignore_ascii_case("term5"));
            }
        }
    }

    #[test]
    fn all_wrong_with_exhausted_source_errors() {
        let glossary = zh_glossary(1);
        let negatives = NegativesSource::Random {
            glossary: &glossary,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let err = synth_term_map(
            &[TermId(0)], // excluding the only term empties the source
            TermMapPattern::AllWrong,
            1.0,
            &negatives,
            &glossary,
            &Lang::new("zh"),
            1,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, SynthError::ExhaustedNegatives));
    }

    #[test]
    fn mined_negatives_match_brute_force_ranking() {
        let glossary = zh_glossary(50);
        let index = build_index(glossary, &MockProvider::new(7, 16)).unwrap();
        let anchor = index.vector(TermId(20)).to_vec();
        let exclude: HashSet<String> = ["term20".to_string()].into_iter().collect();
        let mined = mine_hard_negatives(&index, &anchor, 5, &exclude);

        let mut scored: Vec<(TermId, f32)> = (0..50u32)
            .map(|i| {
                let mut s = 0.0f32;
                for (a, b) in index.vector(TermId(i)).iter().zip(&anchor) {
                    s += a * b;
                }
                (TermId(i), s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<TermId> = scored
            .into_iter()
            .map(|(id, _)| id)
            .filter(|id| *id != TermId(20))
            .take(5)
            .collect();
        assert_eq!(mined, expected);
    }

    #[test]
    fn mining_with_everything_excluded_is_empty() {
        let glossary = zh_glossary(5);
        let index = build_index(glossary, &MockProvider::new(7, 8)).unwrap();
        let exclude: HashSet<String> = (0..5).map(|i| format!("term{i}")).collect();
        let anchor = index.vector(TermId(0)).to_vec();
        assert!(mine_hard_negatives(&index, &anchor, 3, &exclude).is_empty());
    }

    #[test]
    fn duration_stats_single_span() {
        let stats = term_duration_stats(&[phrase("x", 0.0, 0.5)]).unwrap();
        assert_eq!(stats.mean_s, 0.5);
        assert_eq!(stats.p50_s, 0.5);
        assert_eq!(stats.p99_s, 0.5);
    }

    #[test]
    fn duration_stats_hand_mean() {
        let spans: Vec<PhraseSpan> = [0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|d| phrase("x", 1.0, 1.0 + d))
            .collect();
        let stats = term_duration_stats(&spans).unwrap();
        assert!((stats.mean_s - 0.6).abs() < 1e-12);
        assert!((stats.p50_s - 0.6).abs() < 1e-12);
        assert_eq!(stats.histogram.iter().map(|(_, c)| c).sum::<usize>(), 5);
    }

    #[test]
    fn duration_stats_empty_is_error() {
        assert!(matches!(
            term_duration_stats(&[]),
            Err(SynthError::EmptyInput(_))
        ));
    }

    #[test]
    fn normalization_keeps_acronyms() {
        assert_eq!(normalize_phrase("  The BERT Model. "), "the BERT model");
        assert_eq!(normalize_phrase("Attention,  mechanisms!"), "attention mechanisms");
        assert_eq!(normalize_phrase("I"), "i");
    }

    #[test]
    fn sst_synthesis_respects_weights_and_budget() {
        let glossary = zh_glossary(40);
        let negatives = NegativesSource::Random {
            glossary: &glossary,
        };
        let phrases = vec![phrase("term3", 0.4, 0.9), phrase("term7", 2.5, 3.0)];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let all_standard = PatternWeights {
            standard: 1.0,
            none: 0.0,
            all_wrong: 0.0,
        };
        let samples = synth_sst_term_maps(
            &words_until(4.0),
            &phrases,
            &glossary,
            &Lang::new("zh"),
            1.92,
            &all_standard,
            &negatives,
            &mut rng,
        )
        .unwrap();
        assert_eq!(samples.len(), 3);
        assert!(samples
            .iter()
            .all(|s| s.pattern == TermMapPattern::Standard));
        // term3 ends in chunk 1, term7 in chunk 2.
        assert!(samples[0].entries.iter().any(|e| e.term == "term3" && e.is_gold));
        assert!(samples[1].entries.iter().any(|e| e.term == "term7" && e.is_gold));
        assert!(samples.iter().all(|s| s.entries.len() <= TERM_MAP_BUDGET));
    }

    #[test]
    fn sst_example_mirrors_message_structure() {
        let samples = vec![TermMapSample {
            chunk_index: 1,
            pattern: TermMapPattern::Standard,
            entries: vec![TermMapEntry {
                term: "wins".into(),
                translation: "胜利".into(),
                is_gold: true,
            }],
        }];
        let value = sst_example_json("utt1", &samples, &Lang::new("zh"), None, "audio");
        let messages = value["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 3);
        assert_eq!(messages[0]["role"], "system");
        assert!(messages[1]["content"]
            .as_str()
            .unwrap()
            .contains("term_map:\nwins=胜利"));
        assert_eq!(value["patterns"][0], "Standard");
        assert_eq!(value["audios"][0], "audio/utt1_chunk_0001.wav");
    }

    proptest! {
        // Emitted pairs always satisfy containment, and agree with a
        // brute-force all-pairs scan.
        #[test]
        fn pairing_matches_brute_force(
            seed in 0u64..500,
            n_phrases in 0usize..12,
            duration in 2.0f64..12.0,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let phrases: Vec<PhraseSpan> = (0..n_phrases)
                .map(|i| {
                    let len = rng.random_range(0.05..1.8);
                    let start = rng.random_range(0.0..(duration - len).max(0.01));
                    phrase(&format!("p{i}"), start, (start + len).min(duration))
                })
                .collect();
            let pairs = pair_windows(&words_until(duration), &phrases, PAIR_WINDOW_S, PAIR_STRIDE_S).unwrap();
            for pair in &pairs {
                for text in &pair.positives {
                    let p = phrases.iter().find(|p| &p.text == text).unwrap();
                    prop_assert!(pair.start_s <= p.start_s + 1e-9);
                    prop_assert!(p.end_s <= pair.end_s + 1e-9);
                }
            }
            // Brute force: every (window, phrase) containment must appear.
            for pair in &pairs {
                for p in &phrases {
                    let contained = pair.start_s - 1e-9 <= p.start_s && p.end_s <= pair.end_s + 1e-9;
                    prop_assert_eq!(contained, pair.positives.contains(&p.text));
                }
            }
        }

        // dedup_candidates is idempotent.
        #[test]
        fn dedup_is_idempotent(seed in 0u64..300, n in 0usize..10) {
            let vocab = ["model", "language model", "masked language model", "graph", "BERT"];
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let phrases: Vec<PhraseSpan> = (0..n)
                .map(|_| {
                    let text = vocab[rng.random_range(0..vocab.len())];
                    phrase(text, 0.0, 0.5)
                })
                .collect();
            let once = dedup_candidates(&phrases);
            let twice = dedup_candidates(&once);
            prop_assert_eq!(once, twice);
        }
    }
}
