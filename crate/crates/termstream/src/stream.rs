//! Deterministic chunking of recorded speech and enumeration of the
//! sliding retrieval windows unlocked by each chunk.
//!
//! Chunk `i` (1-based) covers `((i-1)*l, i*l]` seconds; the final chunk may be
//! shorter. Retrieval windows end on a `stride_s` grid inside their owning
//! chunk and reach back `window_s` seconds, zero-padded where they extend
//! before the stream start.

use std::path::Path;
use thiserror::Error;

/// Canonical processing rate; other input rates are resampled at load.
pub const TARGET_RATE: u32 = 16_000;

/// Relative tolerance used when checking that the chunk length is a whole
/// multiple of the stride.
const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("failed to read {path}: {msg}")]
    Audio { path: String, msg: String },
}

/// Mono PCM speech at a fixed sample rate.
#[derive(Clone, Debug)]
pub struct SpeechStream {
    samples: Vec<f32>,
    rate: u32,
}

/// What happened while loading a file (for run logs).
#[derive(Clone, Copy, Debug)]
pub struct LoadInfo {
    pub original_rate: u32,
    pub resampled: bool,
}

impl SpeechStream {
    pub fn new(samples: Vec<f32>, rate: u32) -> Result<Self, StreamError> {
        if rate == 0 {
            return Err(StreamError::Config("sample rate must be positive".into()));
        }
        Ok(Self { samples, rate })
    }

    /// Reads a mono WAV file (16-bit PCM or 32-bit float), resampling to
    /// [`TARGET_RATE`] by linear interpolation when needed.
    pub fn from_wav(path: &Path) -> Result<(Self, LoadInfo), StreamError> {
        let audio_err = |msg: String| StreamError::Audio {
            path: path.display().to_string(),
            msg,
        };
        let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(audio_err(format!(
                "expected mono audio, got {} channels",
                spec.channels
            )));
        }
        let samples: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?,
            hound::SampleFormat::Int => {
                if spec.bits_per_sample != 16 {
                    return Err(audio_err(format!(
                        "unsupported PCM bit depth {}",
                        spec.bits_per_sample
                    )));
                }
                reader
                    .samples::<i16>()
                    .map(|s| s.map(|v| v as f32 / 32768.0))
                    .collect::<Result<_, _>>()
                    .map_err(|e| audio_err(e.to_string()))?
            }
        };
        let info = LoadInfo {
            original_rate: spec.sample_rate,
            resampled: spec.sample_rate != TARGET_RATE,
        };
        let samples = if info.resampled {
            resample_linear(&samples, spec.sample_rate, TARGET_RATE)
        } else {
            samples
        };
        Ok((Self::new(samples, TARGET_RATE)?, info))
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    fn sample_at(&self, t_s: f64) -> usize {
        ((t_s * self.rate as f64).round() as usize).min(self.samples.len())
    }
}

fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if samples.is_empty() || from == to {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let a = samples[lo.min(samples.len() - 1)];
            let b = samples[(lo + 1).min(samples.len() - 1)];
            a + (b - a) * frac as f32
        })
        .collect()
}

/// One fixed-duration slice of the stream. Indexing starts at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chunk {
    pub index: u32,
    pub start_s: f64,
    pub end_s: f64,
    /// The configured chunk length; equals `end_s - start_s` except for a
    /// shorter final chunk. Retrieval windows stay on this grid.
    pub nominal_s: f64,
    start_sample: usize,
    end_sample: usize,
}

impl Chunk {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn samples<'a>(&self, stream: &'a SpeechStream) -> &'a [f32] {
        &stream.samples()[self.start_sample..self.end_sample]
    }
}

/// Splits the stream into `ceil(duration / chunk_s)` contiguous chunks whose
/// sample spans concatenate back to the exact input.
pub fn chunk_stream(stream: &SpeechStream, chunk_s: f64) -> Result<Vec<Chunk>, StreamError> {
    if chunk_s <= 0.0 || !chunk_s.is_finite() {
        return Err(StreamError::Config(format!(
            "chunk length must be positive, got {chunk_s}"
        )));
    }
    let total = stream.len();
    let duration = stream.duration_s();
    let mut chunks = Vec::new();
    let mut start_sample = 0usize;
    let mut index = 1u32;
    while start_sample < total {
        let nominal_end = index as f64 * chunk_s;
        let end_sample = stream.sample_at(nominal_end);
        let is_final = end_sample >= total;
        chunks.push(Chunk {
            index,
            start_s: (index - 1) as f64 * chunk_s,
            end_s: if is_final { duration } else { nominal_end },
            nominal_s: chunk_s,
            start_sample,
            end_sample,
        });
        start_sample = end_sample;
        index += 1;
    }
    Ok(chunks)
}

/// A retrieval window ending inside its owning chunk. `pad_s` seconds of
/// leading silence are implied when the window reaches before time zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
    pub chunk_index: u32,
    pub pad_s: f64,
}

/// Number of windows per full chunk, validating `0 < stride <= chunk` and
/// whole-multiple divisibility.
pub fn windows_per_chunk(chunk_s: f64, stride_s: f64) -> Result<u32, StreamError> {
    if stride_s <= 0.0 || !stride_s.is_finite() {
        return Err(StreamError::Config(format!(
            "stride must be positive, got {stride_s}"
        )));
    }
    if stride_s > chunk_s {
        return Err(StreamError::Config(format!(
            "stride {stride_s} exceeds chunk length {chunk_s}"
        )));
    }
    let ratio = chunk_s / stride_s;
    if (ratio - ratio.round()).abs() > DIVISIBILITY_TOL {
        return Err(StreamError::Config(format!(
            "chunk length {chunk_s} is not a whole multiple of stride {stride_s}"
        )));
    }
    Ok(ratio.round() as u32)
}

/// Enumerates the retrieval windows unlocked by chunk `chunk_index`.
///
/// Window ends sit at `(i-1)*chunk_s + j*stride_s` for `j = 1..=chunk_s/stride_s`.
/// For the final partial chunk, grid ends past the stream are dropped and one
/// window ending exactly at the stream end is appended so the tail is covered.
pub fn windows_for_chunk(
    chunk_index: u32,
    chunk_s: f64,
    window_s: f64,
    stride_s: f64,
    stream_duration_s: f64,
) -> Result<Vec<Window>, StreamError> {
    if window_s <= 0.0 || !window_s.is_finite() {
        return Err(StreamError::Config(format!(
            "window length must be positive, got {window_s}"
        )));
    }
    if chunk_index == 0 {
        return Err(StreamError::Config("chunk indexing starts at 1".into()));
    }
    let per_chunk = windows_per_chunk(chunk_s, stride_s)?;
    let base = (chunk_index - 1) as f64 * chunk_s;
    let window_at = |end_s: f64| Window {
        start_s: (end_s - window_s).max(0.0),
        end_s,
        chunk_index,
        pad_s: (window_s - end_s).max(0.0),
    };
    let mut windows = Vec::with_capacity(per_chunk as usize);
    for j in 1..=per_chunk {
        let end = base + j as f64 * stride_s;
        if end <= stream_duration_s + DIVISIBILITY_TOL {
            windows.push(window_at(end.min(stream_duration_s)));
        }
    }
    // Tail of a final partial chunk that falls between grid points.
    let is_final_partial =
        stream_duration_s > base && stream_duration_s < base + chunk_s - DIVISIBILITY_TOL;
    let last_end = windows.last().map(|w| w.end_s).unwrap_or(base);
    if is_final_partial && stream_duration_s - last_end > DIVISIBILITY_TOL {
        windows.push(window_at(stream_duration_s));
    }
    Ok(windows)
}

/// Window audio with any leading silence materialized as zeros, so the
/// sample count is the same for every window of a given length.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowAudio {
    pub start_s: f64,
    pub end_s: f64,
    pub pad_s: f64,
    pub samples: Vec<f32>,
}

impl WindowAudio {
    /// Little-endian byte view of the samples, the unit hashed by
    /// content-addressed embedding providers.
    pub fn byte_content(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 4);
        for s in &self.samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        bytes
    }
}

/// Extracts a window's audio span, prepending zeros for the padded prefix.
pub fn window_audio(stream: &SpeechStream, window: &Window, window_s: f64) -> WindowAudio {
    let n_window = (window_s * stream.rate() as f64).round() as usize;
    let end_sample = stream.sample_at(window.end_s);
    let start_sample = end_sample.saturating_sub(n_window);
    let pad = n_window - (end_sample - start_sample);
    let mut samples = vec![0.0f32; pad];
    samples.extend_from_slice(&stream.samples()[start_sample..end_sample]);
    WindowAudio {
        start_s: window.start_s,
        end_s: window.end_s,
        pad_s: window.pad_s,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn silent(duration_s: f64) -> SpeechStream {
        let n = (duration_s * TARGET_RATE as f64).round() as usize;
        SpeechStream::new(vec![0.0; n], TARGET_RATE).unwrap()
    }

    fn noisy(duration_s: f64, seed: u64) -> SpeechStream {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let n = (duration_s * TARGET_RATE as f64).round() as usize;
        let samples = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        SpeechStream::new(samples, TARGET_RATE).unwrap()
    }

    #[test]
    fn five_even_chunks() {
        let chunks = chunk_stream(&silent(9.6), 1.92).unwrap();
        assert_eq!(chunks.len(), 5);
        for c in &chunks {
            assert!((c.duration_s() - 1.92).abs() < 1e-9);
        }
        assert_eq!(chunks[4].index, 5);
    }

    #[test]
    fn single_short_chunk() {
        let chunks = chunk_stream(&silent(1.0), 1.92).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!((chunks[0].duration_s() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn partial_final_chunk_and_exact_reconstruction() {
        let stream = noisy(5.0, 7);
        let chunks = chunk_stream(&stream, 0.96).unwrap();
        assert_eq!(chunks.len(), 6);
        assert!((chunks[5].duration_s() - 0.20).abs() < 1e-9);
        let mut rebuilt = Vec::new();
        for c in &chunks {
            rebuilt.extend_from_slice(c.samples(&stream));
        }
        assert_eq!(rebuilt, stream.samples());
    }

    #[test]
    fn empty_stream_has_no_chunks() {
        let stream = SpeechStream::new(Vec::new(), TARGET_RATE).unwrap();
        assert!(chunk_stream(&stream, 1.92).unwrap().is_empty());
    }

    #[test]
    fn chunk_two_window_ends() {
        let ends: Vec<f64> = windows_for_chunk(2, 1.92, 1.92, 0.48, 9.6)
            .unwrap()
            .iter()
            .map(|w| w.end_s)
            .collect();
        let expected = [2.40, 2.88, 3.36, 3.84];
        assert_eq!(ends.len(), 4);
        for (got, want) in ends.iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn degenerate_sliding_is_the_chunk_itself() {
        let windows = windows_for_chunk(3, 1.92, 1.92, 1.92, 9.6).unwrap();
        assert_eq!(windows.len(), 1);
        let w = windows[0];
        assert!((w.start_s - 3.84).abs() < 1e-9);
        assert!((w.end_s - 5.76).abs() < 1e-9);
        assert_eq!(w.pad_s, 0.0);
    }

    #[test]
    fn first_window_left_clipped_with_pad() {
        let windows = windows_for_chunk(1, 1.92, 1.92, 0.48, 9.6).unwrap();
        let w = windows[0];
        assert_eq!(w.start_s, 0.0);
        assert!((w.end_s - 0.48).abs() < 1e-9);
        assert!((w.pad_s - 1.44).abs() < 1e-9);
    }

    #[test]
    fn bad_stride_configs_rejected() {
        assert!(windows_for_chunk(1, 1.92, 1.92, 2.0, 9.6).is_err());
        assert!(windows_for_chunk(1, 1.92, 1.92, 0.5, 9.6).is_err());
        assert!(windows_for_chunk(1, 1.92, 1.92, 0.0, 9.6).is_err());
    }

    #[test]
    fn final_partial_chunk_clamps_to_stream_end() {
        // 5.0 s stream, l = 0.96: chunk 6 covers (4.8, 5.0].
        let windows = windows_for_chunk(6, 0.96, 1.92, 0.48, 5.0).unwrap();
        assert_eq!(windows.len(), 1);
        assert!((windows[0].end_s - 5.0).abs() < 1e-12);
        // Grid end 5.28 would overshoot; it must not appear.
        for w in &windows {
            assert!(w.end_s <= 5.0 + 1e-12);
        }
    }

    #[test]
    fn window_audio_has_constant_length_and_zero_pad() {
        let stream = noisy(9.6, 3);
        for w in windows_for_chunk(1, 1.92, 1.92, 0.48, 9.6).unwrap() {
            let audio = window_audio(&stream, &w, 1.92);
            assert_eq!(audio.samples.len(), (1.92 * TARGET_RATE as f64) as usize);
            let pad_samples = (w.pad_s * TARGET_RATE as f64).round() as usize;
            assert!(audio.samples[..pad_samples].iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn resample_preserves_duration() {
        let samples: Vec<f32> = (0..8000).map(|i| (i as f32 / 100.0).sin()).collect();
        let out = resample_linear(&samples, 8000, 16000);
        assert_eq!(out.len(), 16000);
    }

    proptest! {
        // Windows across all chunks: ends form a stride grid covering the
        // stream, never cross into a future chunk, and stay inside the owner.
        #[test]
        fn window_grid_is_causal_and_covering(
            duration in 0.5f64..30.0,
            chunk_choice in 0usize..4,
            steps in 1u32..6,
        ) {
            let chunk_s = [0.96, 1.92, 2.88, 3.84][chunk_choice];
            let stride_s = chunk_s / steps as f64;
            let window_s = 1.92;
            let stream = silent(duration);
            let chunks = chunk_stream(&stream, chunk_s).unwrap();
            let mut all_ends = Vec::new();
            for c in &chunks {
                let ws = windows_for_chunk(c.index, chunk_s, window_s, stride_s, stream.duration_s()).unwrap();
                for w in &ws {
                    prop_assert!(w.end_s <= c.end_s + 1e-9, "window end {} beyond chunk end {}", w.end_s, c.end_s);
                    prop_assert!(w.end_s > c.start_s - 1e-9);
                    prop_assert!((w.start_s - (w.end_s - window_s).max(0.0)).abs() < 1e-12);
                    all_ends.push(w.end_s);
                }
            }
            // Arithmetic grid with step stride_s, except a possible clamped tail.
            for pair in all_ends.windows(2) {
                let step = pair[1] - pair[0];
                prop_assert!(step > 0.0);
                prop_assert!(step <= stride_s + 1e-9);
            }
            let last = all_ends.last().copied().unwrap_or(0.0);
            prop_assert!((last - stream.duration_s()).abs() < 1e-9, "tail uncovered: {last}");
        }

        // Any span of duration <= window - stride starting after time zero
        // falls entirely inside at least one window.
        #[test]
        fn short_spans_are_covered(
            span_start in 0.0f64..20.0,
            span_len_frac in 0.01f64..0.999,
        ) {
            let (chunk_s, window_s, stride_s) = (1.92, 1.92, 0.48);
            let duration = 25.0;
            let span_len = span_len_frac * (window_s - stride_s);
            let span = (span_start, span_start + span_len);
            let stream = silent(duration);
            let mut covered = false;
            for c in chunk_stream(&stream, chunk_s).unwrap() {
                for w in windows_for_chunk(c.index, chunk_s, window_s, stride_s, duration).unwrap() {
                    if w.start_s <= span.0 + 1e-12 && span.1 <= w.end_s + 1e-12 {
                        covered = true;
                    }
                }
            }
            prop_assert!(covered);
        }
    }
}
