//! Command-line surface and run orchestration.
//!
//! Subcommands: `index`, `synth pairs|sst`, `simulate`, `retrieve`,
//! `evaluate`, `ablate`, `bench`. Every command validates its configuration
//! before any computation starts and writes a run manifest next to its
//! outputs. Scripted runs measure time through the null clock so their
//! outputs are byte-identical across executions; `--real-clock` (and the
//! `bench` command) switch to wall time.

use crate::config::{
    Clock, ConfigError, NullClock, RunConfig, RunManifest, SeedTree, SystemClock,
};
use crate::driver::{
    assemble_hypothesis, read_event_log, run_session, write_event_log, EchoIndexPolicy,
    HistoryPolicy, SessionParams, TermMapPolicy, TranslatorPolicy, WaitPolicy,
};
use crate::embedding::{EmbeddingProvider, FileStoreProvider, GoldSpan, MockProvider, OracleProvider};
use crate::glossary::Glossary;
use crate::index::{build_index, TermIndex};
use crate::lang::Lang;
use crate::metrics::{
    self, overhead_ratio, recall_at_k, BleuSmoothing, GoldOccurrence, RecallMode, Tokenization,
};
use crate::remote::{RemoteChatPolicy, RemoteProvider};
use crate::retriever::{retrieve_for_chunk, RetrieveParams};
use crate::stream::{chunk_stream, SpeechStream};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, configuration, or input file contents; exit code 2.
    #[error("{0}")]
    Input(String),
    /// Failures during computation or remote calls; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "termstream",
    version,
    about = "Deterministic glossary-grounded simultaneous speech translation harness"
)]
pub struct Cli {
    /// TOML run configuration; flags override individual fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lang: Option<Lang>,
    #[arg(long, global = true)]
    pub chunk_s: Option<f64>,
    #[arg(long, global = true)]
    pub window_s: Option<f64>,
    #[arg(long, global = true)]
    pub stride_s: Option<f64>,
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ProviderOpts {
    #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
    pub provider: ProviderKind,
    /// Embedding dimension for mock and remote providers.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Gold spans JSONL ({"term", "start_s", "end_s"}) for the oracle provider.
    #[arg(long)]
    pub oracle_spans: Option<PathBuf>,
    #[arg(long)]
    pub store_vectors: Option<PathBuf>,
    #[arg(long)]
    pub store_manifest: Option<PathBuf>,
    #[arg(long)]
    pub embed_endpoint: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Mock,
    Oracle,
    FileStore,
    Remote,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Wait,
    Echo,
    TermMap,
    Remote,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateDimension {
    Window,
    Stride,
    Retrieval,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a term index from a glossary file.
    Index {
        #[arg(long)]
        glossary: PathBuf,
        /// Comma-separated language codes every entry must carry.
        #[arg(long, value_delimiter = ',')]
        langs: Vec<Lang>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
    },
    /// Synthesize training data.
    Synth {
        #[command(subcommand)]
        mode: SynthMode,
    },
    /// Run a full retrieval-augmented session over one talk.
    Simulate {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
        #[arg(long, value_enum, default_value_t = PolicyKind::TermMap)]
        policy: PolicyKind,
        #[arg(long)]
        policy_endpoint: Option<String>,
        /// Measure real wall time instead of the deterministic null clock.
        #[arg(long)]
        real_clock: bool,
        /// Re-run from a previously written manifest (verifies input hashes).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Keep only this many history turns visible to the policy.
        #[arg(long)]
        history_turns: Option<usize>,
    },
    /// Per-chunk retrieval only, as JSON-lines.
    Retrieve {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
    },
    /// Score an event log against references.
    Evaluate {
        #[arg(long)]
        event_log: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        terms: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long)]
        per_segment_csv: Option<PathBuf>,
        /// Gold retrieval occurrences ({"chunk_index", "term_id", ...}).
        #[arg(long)]
        gold_retrieval: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        recall_k: usize,
        #[arg(long, value_enum)]
        tokenization: Option<TokenizationOpt>,
        #[arg(long, value_enum, default_value_t = SmoothingOpt::Exp)]
        smoothing: SmoothingOpt,
    },
    /// Sweep a retrieval parameter and tabulate Recall@10, or compare
    /// retrieval on/off on end-to-end terminology accuracy.
    Ablate {
        #[arg(long, value_enum)]
        dimension: AblateDimension,
        /// Values to sweep (seconds), for window/stride dimensions.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Gold spans JSONL for recall sweeps.
        #[arg(long)]
        spans: Option<PathBuf>,
        /// References and term occurrences for the retrieval dimension.
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        terms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
        #[arg(long, default_value_t = 10)]
        recall_k: usize,
    },
    /// Measure retriever and policy wall time with the real clock.
    Bench {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        provider: ProviderOpts,
        #[arg(long, value_enum, default_value_t = PolicyKind::TermMap)]
        policy: PolicyKind,
        #[arg(long)]
        policy_endpoint: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum SynthMode {
    /// (speech window, positive terms) retriever supervision pairs.
    Pairs {
        #[arg(long)]
        alignment: PathBuf,
        #[arg(long)]
        phrases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::synth::PAIR_WINDOW_S)]
        pair_window_s: f64,
        #[arg(long, default_value_t = crate::synth::PAIR_STRIDE_S)]
        pair_stride_s: f64,
        /// Skip phrase normalization and containment dedup.
        #[arg(long)]
        raw: bool,
    },
    /// Chunked term-map training instances.
    Sst {
        #[arg(long)]
        alignment: PathBuf,
        #[arg(long)]
        phrases: PathBuf,
        #[arg(long)]
        glossary: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Standard,None,AllWrong mixing weights.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = NegativeStrategy::Random)]
        negatives: NegativeStrategy,
        /// Term index used by the mined negative strategy.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Optional per-chunk translations (JSON-lines strings).
        #[arg(long)]
        translations: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeStrategy {
    Random,
    Mined,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizationOpt {
    Word,
    Char,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingOpt {
    Exp,
    None,
}

/// Resolves the effective configuration: file, then flag overrides.
fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(lang) = &cli.lang {
        config.lang = lang.clone();
    }
    if let Some(v) = cli.chunk_s {
        config.chunk_s = v;
    }
    if let Some(v) = cli.window_s {
        config.window_s = v;
    }
    if let Some(v) = cli.stride_s {
        config.stride_s = v;
    }
    if let Some(v) = cli.k1 {
        config.k1 = v;
    }
    if let Some(v) = cli.k2 {
        config.k2 = v;
    }
    config.validate()?;
    Ok(config)
}

/// A gold span referencing a term by its surface text.
#[derive(Debug, Serialize, Deserialize)]
pub struct SpanRecord {
    pub term: String,
    pub start_s: f64,
    pub end_s: f64,
}

pub fn read_span_records(path: &Path) -> Result<Vec<SpanRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(input)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn resolve_spans(records: &[SpanRecord], glossary: &Glossary) -> Result<Vec<GoldSpan>, CliError> {
    records
        .iter()
        .map(|r| {
            let term_id = glossary.find(&r.term).ok_or_else(|| {
                CliError::Input(format!("span term {:?} is not in the glossary", r.term))
            })?;
            Ok(GoldSpan {
                term_id,
                start_s: r.start_s,
                end_s: r.end_s,
            })
        })
        .collect()
}

fn build_provider(
    opts: &ProviderOpts,
    config: &RunConfig,
    index: Option<&TermIndex>,
) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    let seeds = SeedTree::new(config.seed);
    let provider_seed = seeds.stage_seed("provider");
    match opts.provider {
        ProviderKind::Mock => Ok(Box::new(MockProvider::new(provider_seed, opts.dim))),
        ProviderKind::Oracle => {
            let index = index.ok_or_else(|| {
                CliError::Input("the oracle provider needs a built index".into())
            })?;
            let spans = match &opts.oracle_spans {
                Some(path) => resolve_spans(&read_span_records(path)?, index.glossary())?,
                None => Vec::new(),
            };
            Ok(Box::new(OracleProvider::new(index, spans, provider_seed)))
        }
        ProviderKind::FileStore => {
            let (vectors, manifest) = match (&opts.store_vectors, &opts.store_manifest) {
                (Some(v), Some(m)) => (v, m),
                _ => {
                    return Err(CliError::Input(
                        "file-store provider needs --store-vectors and --store-manifest".into(),
                    ))
                }
            };
            Ok(Box::new(
                FileStoreProvider::load(vectors, manifest).map_err(input)?,
            ))
        }
        ProviderKind::Remote => {
            let endpoint = opts
                .embed_endpoint
                .clone()
                .or_else(|| config.embed_endpoint.clone())
                .ok_or_else(|| {
                    CliError::Input("remote provider needs --embed-endpoint".into())
                })?;
            Ok(Box::new(RemoteProvider::new(
                &endpoint,
                opts.dim,
                Duration::from_secs(30),
                3,
            )))
        }
    }
}

fn build_policy(
    kind: PolicyKind,
    endpoint: Option<&str>,
    config: &RunConfig,
) -> Result<Box<dyn TranslatorPolicy>, CliError> {
    match kind {
        PolicyKind::Wait => Ok(Box::new(WaitPolicy)),
        PolicyKind::Echo => Ok(Box::new(EchoIndexPolicy)),
        PolicyKind::TermMap => Ok(Box::new(TermMapPolicy { filler: None })),
        PolicyKind::Remote => {
            let endpoint = endpoint
                .map(str::to_string)
                .or_else(|| config.policy_endpoint.clone())
                .ok_or_else(|| {
                    CliError::Input("remote policy needs --policy-endpoint".into())
                })?;
            Ok(Box::new(RemoteChatPolicy::new(
                &endpoint,
                Duration::from_secs(60),
                3,
            )))
        }
    }
}

fn load_index(path: &Path, lang: &Lang) -> Result<TermIndex, CliError> {
    TermIndex::load(path, std::slice::from_ref(lang)).map_err(input)
}

fn load_audio(path: &Path) -> Result<SpeechStream, CliError> {
    let (stream, info) = SpeechStream::from_wav(path).map_err(input)?;
    if info.resampled {
        eprintln!(
            "note: resampled {} from {} Hz to {} Hz",
            path.display(),
            info.original_rate,
            crate::stream::TARGET_RATE
        );
    }
    Ok(stream)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    std::fs::write(path, text).map_err(runtime)
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Index {
            glossary,
            langs,
            out,
            provider,
        } => cmd_index(&config, glossary, langs, out, provider),
        Command::Synth { mode } => cmd_synth(&config, mode),
        Command::Simulate {
            audio,
            index,
            out_dir,
            provider,
            policy,
            policy_endpoint,
            real_clock,
            manifest,
            history_turns,
        } => cmd_simulate(
            &config,
            audio,
            index,
            out_dir,
            provider,
            *policy,
            policy_endpoint.as_deref(),
            *real_clock,
            manifest.as_deref(),
            *history_turns,
        ),
        Command::Retrieve {
            audio,
            index,
            out,
            provider,
        } => cmd_retrieve(&config, audio, index, out, provider),
        Command::Evaluate {
            event_log,
            references,
            terms,
            out_report,
            per_segment_csv,
            gold_retrieval,
            recall_k,
            tokenization,
            smoothing,
        } => cmd_evaluate(
            &config,
            event_log,
            references,
            terms,
            out_report,
            per_segment_csv.as_deref(),
            gold_retrieval.as_deref(),
            *recall_k,
            *tokenization,
            *smoothing,
        ),
        Command::Ablate {
            dimension,
            values,
            audio,
            index,
            spans,
            references,
            terms,
            out,
            provider,
            recall_k,
        } => cmd_ablate(
            &config,
            *dimension,
            values,
            audio,
            index,
            spans.as_deref(),
            references.as_deref(),
            terms.as_deref(),
            out,
            provider,
            *recall_k,
        ),
        Command::Bench {
            audio,
            index,
            provider,
            policy,
            policy_endpoint,
            out,
        } => cmd_bench(
            &config,
            audio,
            index,
            provider,
            *policy,
            policy_endpoint.as_deref(),
            out.as_deref(),
        ),
    }
}

fn cmd_index(
    config: &RunConfig,
    glossary_path: &Path,
    langs: &[Lang],
    out: &Path,
    provider_opts: &ProviderOpts,
) -> Result<(), CliError> {
    if langs.is_empty() {
        return Err(CliError::Input("--langs must name at least one language".into()));
    }
    if provider_opts.provider == ProviderKind::Oracle {
        return Err(CliError::Input(
            "the oracle provider cannot build an index; use mock, file-store, or remote".into(),
        ));
    }
    let started = std::time::Instant::now();
    let glossary = Glossary::load(glossary_path, langs).map_err(input)?;
    let provider = build_provider(provider_opts, config, None)?;
    let index = build_index(glossary, provider.as_ref()).map_err(runtime)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    index.save(out).map_err(runtime)?;

    let mut manifest = RunManifest::new("index", config.clone());
    manifest.record_input(glossary_path).map_err(runtime)?;
    manifest.record_stage_ms("index", started.elapsed().as_secs_f64() * 1e3);
    manifest.write(&manifest_path_for(out)).map_err(runtime)?;
    println!(
        "indexed {} terms at dim {} -> {}",
        index.len(),
        index.dim(),
        out.display()
    );
    Ok(())
}

fn cmd_synth(config: &RunConfig, mode: &SynthMode) -> Result<(), CliError> {
    use crate::synth;
    let seeds = SeedTree::new(config.seed);
    match mode {
        SynthMode::Pairs {
            alignment,
            phrases,
            out,
            pair_window_s,
            pair_stride_s,
            raw,
        } => {
            let started = std::time::Instant::now();
            let words = synth::read_alignment(alignment).map_err(input)?;
            let mut spans = synth::read_phrases(phrases).map_err(input)?;
            if !*raw {
                for p in &mut spans {
                    p.text = synth::normalize_phrase(&p.text);
                }
                spans.retain(|p| !p.text.is_empty());
                spans = synth::dedup_candidates(&spans);
            }
            let pairs = synth::pair_windows(&words, &spans, *pair_window_s, *pair_stride_s)
                .map_err(input)?;
            let utterance = alignment
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "utterance".into());
            let mut text = String::from("{\"schema\":\"window-pairs/1\"}\n");
            for pair in &pairs {
                let line = serde_json::json!({
                    "utterance": utterance,
                    "window_start_s": pair.start_s,
                    "window_end_s": pair.end_s,
                    "positives": pair.positives,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            write_text(out, &text)?;
            let stats = synth::term_duration_stats(&spans).ok();
            let mut manifest = RunManifest::new("synth-pairs", config.clone());
            manifest.record_input(alignment).map_err(runtime)?;
            manifest.record_input(phrases).map_err(runtime)?;
            manifest.record_stage_ms("synth", started.elapsed().as_secs_f64() * 1e3);
            manifest.write(&manifest_path_for(out)).map_err(runtime)?;
            println!("wrote {} window pairs -> {}", pairs.len(), out.display());
            if let Some(stats) = stats {
                println!(
                    "span durations: mean {:.3}s p50 {:.3}s p90 {:.3}s p99 {:.3}s over {} spans",
                    stats.mean_s, stats.p50_s, stats.p90_s, stats.p99_s, stats.count
                );
            }
            Ok(())
        }
        SynthMode::Sst {
            alignment,
            phrases,
            glossary,
            out,
            weights,
            negatives,
            index,
            translations,
        } => {
            let started = std::time::Instant::now();
            let words = synth::read_alignment(alignment).map_err(input)?;
            let spans = synth::read_phrases(phrases).map_err(input)?;
            let glossary_data =
                Glossary::load(glossary, std::slice::from_ref(&config.lang)).map_err(input)?;
            let weights = match weights {
                Some(w) if w.len() == 3 => synth::PatternWeights {
                    standard: w[0],
                    none: w[1],
                    all_wrong: w[2],
                },
                Some(w) => {
                    return Err(CliError::Input(format!(
                        "--weights needs exactly three values, got {}",
                        w.len()
                    )))
                }
                None => synth::PatternWeights::default(),
            };
            let loaded_index = match (negatives, index) {
                (NegativeStrategy::Mined, Some(path)) => Some(load_index(path, &config.lang)?),
                (NegativeStrategy::Mined, None) => {
                    return Err(CliError::Input(
                        "mined negatives need --index".into(),
                    ))
                }
                _ => None,
            };
            let utterance = alignment
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "utterance".into());
            let mut rng = seeds.stage_rng(&format!("synth/{utterance}"));
            let source = match &loaded_index {
                Some(idx) => {
                    // Text-encoder mining anchored on the chunk's gold terms
                    // happens inside synth_sst_term_maps per chunk; here the
                    // anchor is refreshed per utterance from all gold spans.
                    let anchor = anchor_from_spans(idx, &spans);
                    match anchor {
                        Some(anchor) => synth::NegativesSource::Mined { index: idx, anchor },
                        None => synth::NegativesSource::Random {
                            glossary: idx.glossary(),
                        },
                    }
                }
                None => synth::NegativesSource::Random {
                    glossary: &glossary_data,
                },
            };
            let samples = synth::synth_sst_term_maps(
                &words,
                &spans,
                &glossary_data,
                &config.lang,
                config.chunk_s,
                &weights,
                &source,
                &mut rng,
            )
            .map_err(input)?;
            let provided: Option<Vec<String>> = match translations {
                Some(path) => Some(
                    std::fs::read_to_string(path)
                        .map_err(input)?
                        .lines()
                        .map(|l| serde_json::from_str::<String>(l).unwrap_or_else(|_| l.to_string()))
                        .collect(),
                ),
                None => None,
            };
            let value = synth::sst_example_json(
                &utterance,
                &samples,
                &config.lang,
                provided.as_deref(),
                "audio",
            );
            let mut text = String::from("{\"schema\":\"sst-term-maps/1\"}\n");
            text.push_str(&value.to_string());
            text.push('\n');
            write_text(out, &text)?;
            let mut manifest = RunManifest::new("synth-sst", config.clone());
            manifest.record_input(alignment).map_err(runtime)?;
            manifest.record_input(phrases).map_err(runtime)?;
            manifest.record_input(glossary).map_err(runtime)?;
            manifest.record_stage_ms("synth", started.elapsed().as_secs_f64() * 1e3);
            manifest.write(&manifest_path_for(out)).map_err(runtime)?;
            println!(
                "wrote {} chunk term maps for {utterance} -> {}",
                samples.len(),
                out.display()
            );
            Ok(())
        }
    }
}

/// Normalized mean of the indexed vectors of all glossary terms mentioned in
/// the spans; anchor for utterance-level hard-negative mining.
fn anchor_from_spans(index: &TermIndex, spans: &[crate::synth::PhraseSpan]) -> Option<Vec<f32>> {
    let mut sum = vec![0.0f64; index.dim()];
    let mut any = false;
    for span in spans {
        if let Some(id) = index.glossary().find(&span.text) {
            for (acc, x) in sum.iter_mut().zip(index.vector(id)) {
                *acc += *x as f64;
            }
            any = true;
        }
    }
    if !any {
        return None;
    }
    crate::embedding::l2_normalize(&sum)
        .ok()
        .map(|v| v.into_iter().map(|x| x as f32).collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &RunConfig,
    audio: &Path,
    index_path: &Path,
    out_dir: &Path,
    provider_opts: &ProviderOpts,
    policy_kind: PolicyKind,
    policy_endpoint: Option<&str>,
    real_clock: bool,
    manifest_in: Option<&Path>,
    history_turns: Option<usize>,
) -> Result<(), CliError> {
    let config = match manifest_in {
        Some(path) => {
            let manifest = RunManifest::read(path)?;
            manifest.verify_inputs()?;
            manifest.config
        }
        None => config.clone(),
    };
    let started = std::time::Instant::now();
    let stream = load_audio(audio)?;
    let index = load_index(index_path, &config.lang)?;
    let provider = build_provider(provider_opts, &config, Some(&index))?;
    let mut policy = build_policy(policy_kind, policy_endpoint, &config)?;
    let mut params = SessionParams::from_config(&config);
    if let Some(turns) = history_turns {
        params.history = HistoryPolicy::Sliding { max_turns: turns };
    }
    let clock: Box<dyn Clock> = if real_clock || policy_kind == PolicyKind::Remote {
        Box::new(SystemClock::new())
    } else {
        Box::new(NullClock)
    };

    std::fs::create_dir_all(out_dir).map_err(runtime)?;
    let log_path = out_dir.join("event_log.jsonl");
    let result = run_session(
        &stream,
        &index,
        provider.as_ref(),
        policy.as_mut(),
        &params,
        clock.as_ref(),
    );
    let steps = match result {
        Ok(steps) => steps,
        Err(abort) => {
            // Preserve the partial log before failing.
            write_event_log(&log_path, &abort.steps).map_err(runtime)?;
            return Err(CliError::Runtime(format!(
                "{abort}; partial log preserved at {}",
                log_path.display()
            )));
        }
    };
    write_event_log(&log_path, &steps).map_err(runtime)?;

    let mut manifest = RunManifest::new("simulate", config.clone());
    manifest.record_input(audio).map_err(runtime)?;
    manifest.record_input(index_path).map_err(runtime)?;
    manifest.record_stage_ms("simulate", started.elapsed().as_secs_f64() * 1e3);
    manifest.write(&out_dir.join("manifest.json")).map_err(runtime)?;

    let emitted: usize = steps.iter().map(|s| s.tokens.len()).sum();
    println!(
        "simulated {} chunks, {} tokens emitted -> {}",
        steps.len(),
        emitted,
        log_path.display()
    );
    Ok(())
}

fn cmd_retrieve(
    config: &RunConfig,
    audio: &Path,
    index_path: &Path,
    out: &Path,
    provider_opts: &ProviderOpts,
) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let stream = load_audio(audio)?;
    let index = load_index(index_path, &config.lang)?;
    let provider = build_provider(provider_opts, config, Some(&index))?;
    let clock = SystemClock::new();
    let params = RetrieveParams {
        window_s: config.window_s,
        stride_s: config.stride_s,
        k1: config.k1,
        k2: config.k2,
    };
    let mut text = String::from("{\"schema\":\"retrieval/1\"}\n");
    for chunk in chunk_stream(&stream, config.chunk_s).map_err(input)? {
        let timed = retrieve_for_chunk(&index, provider.as_ref(), &stream, &chunk, &params, &clock)
            .map_err(runtime)?;
        let hits: Vec<serde_json::Value> = timed
            .set
            .hits
            .iter()
            .map(|h| {
                serde_json::json!({
                    "term": index.glossary().term(h.term_id).unwrap_or(""),
                    "score": h.score,
                    "window_end_s": h.window_end_s,
                })
            })
            .collect();
        let line = serde_json::json!({
            "chunk": chunk.index,
            "hits": hits,
            "retriever_ms": timed.retriever_ms,
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    write_text(out, &text)?;
    let mut manifest = RunManifest::new("retrieve", config.clone());
    manifest.record_input(audio).map_err(runtime)?;
    manifest.record_input(index_path).map_err(runtime)?;
    manifest.record_stage_ms("retrieve", started.elapsed().as_secs_f64() * 1e3);
    manifest.write(&manifest_path_for(out)).map_err(runtime)?;
    println!("wrote retrieval log -> {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    config: &RunConfig,
    event_log: &Path,
    references: &Path,
    terms: &Path,
    out_report: &Path,
    per_segment_csv: Option<&Path>,
    gold_retrieval: Option<&Path>,
    recall_k: usize,
    tokenization: Option<TokenizationOpt>,
    smoothing: SmoothingOpt,
) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let steps = read_event_log(event_log).map_err(input)?;
    let refs = metrics::read_references(references).map_err(input)?;
    let occurrences = metrics::read_occurrences(terms).map_err(input)?;
    let tok = match tokenization {
        Some(TokenizationOpt::Word) => Tokenization::Word,
        Some(TokenizationOpt::Char) => Tokenization::Char,
        None => Tokenization::for_lang(&config.lang),
    };
    let smoothing = match smoothing {
        SmoothingOpt::Exp => BleuSmoothing::Exp,
        SmoothingOpt::None => BleuSmoothing::None,
    };
    let (hyp_tokens, _) = assemble_hypothesis(&steps);
    let (mut report, _pairs) =
        metrics::score_stream(&hyp_tokens, &refs, &occurrences, tok, smoothing)
            .map_err(input)?;

    if let Some(path) = gold_retrieval {
        let gold: Vec<GoldOccurrence> = metrics::read_gold_occurrences(path).map_err(input)?;
        let sets: Vec<_> = steps.iter().map(|s| s.retrieved.clone()).collect();
        let recall = recall_at_k(&sets, &gold, recall_k, RecallMode::ExactChunk).map_err(input)?;
        report.recall_at_k = Some(recall);
        report.recall_k = Some(recall_k);
    }
    let retriever_ms: f64 = steps.iter().map(|s| s.retriever_ms).sum();
    let policy_ms: f64 = steps.iter().map(|s| s.policy_latency_ms).sum();
    report.overhead_ratio = overhead_ratio(retriever_ms, policy_ms).ok();

    let mut json = serde_json::to_string_pretty(&report).map_err(runtime)?;
    json.push('\n');
    write_text(out_report, &json)?;
    if let Some(csv_path) = per_segment_csv {
        write_text(csv_path, &report.per_segment_csv())?;
    }
    let mut manifest = RunManifest::new("evaluate", config.clone());
    manifest.record_input(event_log).map_err(runtime)?;
    manifest.record_input(references).map_err(runtime)?;
    manifest.record_input(terms).map_err(runtime)?;
    manifest.record_stage_ms("evaluate", started.elapsed().as_secs_f64() * 1e3);
    manifest
        .write(&manifest_path_for(out_report))
        .map_err(runtime)?;
    println!(
        "BLEU {:.2} | term accuracy {:.3} (unique {:.3}) | LAAL {}",
        report.bleu,
        report.term_accuracy,
        report.term_accuracy_unique,
        report
            .stream_laal_s
            .map(|v| format!("{v:.3}s"))
            .unwrap_or_else(|| "n/a".into()),
    );
    Ok(())
}

/// One row of an ablation table.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub value: f64,
    pub recall_at_k: f64,
}

/// Runs retrieval over the whole talk at the given parameters and scores
/// window-tolerant recall against gold spans.
pub fn sweep_recall(
    stream: &SpeechStream,
    index: &TermIndex,
    provider: &dyn EmbeddingProvider,
    spans: &[GoldSpan],
    chunk_s: f64,
    params: &RetrieveParams,
    k: usize,
) -> Result<f64, CliError> {
    let clock = NullClock;
    let mut sets = Vec::new();
    for chunk in chunk_stream(stream, chunk_s).map_err(input)? {
        sets.push(
            retrieve_for_chunk(index, provider, stream, &chunk, params, &clock)
                .map_err(runtime)?
                .set,
        );
    }
    let gold: Vec<GoldOccurrence> = spans
        .iter()
        .map(|s| GoldOccurrence {
            chunk_index: ((s.end_s / chunk_s).ceil() as u32).max(1),
            term_id: s.term_id,
            span: Some((s.start_s, s.end_s)),
        })
        .collect();
    recall_at_k(
        &sets,
        &gold,
        k,
        RecallMode::WindowTolerant {
            chunk_s,
            window_s: params.window_s,
            stride_s: params.stride_s,
            duration_s: stream.duration_s(),
        },
    )
    .map_err(input)
}

/// Term accuracy and BLEU for the same scripted glossary-aware policy with
/// retrieval enabled vs disabled; the direct harness behind
/// `ablate --dimension retrieval`.
pub struct RetrievalBenefitRow {
    pub retrieval: bool,
    pub term_accuracy: f64,
    pub bleu: f64,
}

pub fn retrieval_benefit(
    stream: &SpeechStream,
    index: &TermIndex,
    provider: &dyn EmbeddingProvider,
    refs: &[metrics::ReferenceSegment],
    occurrences: &[metrics::TermOccurrence],
    base: &SessionParams,
) -> Result<Vec<RetrievalBenefitRow>, CliError> {
    let mut rows = Vec::new();
    for retrieval in [true, false] {
        let mut params = base.clone();
        if !retrieval {
            params.k2 = 0;
        }
        let mut policy = TermMapPolicy { filler: None };
        let steps = run_session(stream, index, provider, &mut policy, &params, &NullClock)
            .map_err(runtime)?;
        let (hyp, _) = assemble_hypothesis(&steps);
        let tok = Tokenization::for_lang(&params.lang);
        let (report, _) =
            metrics::score_stream(&hyp, refs, occurrences, tok, BleuSmoothing::Exp)
                .map_err(input)?;
        rows.push(RetrievalBenefitRow {
            retrieval,
            term_accuracy: report.term_accuracy,
            bleu: report.bleu,
        });
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    config: &RunConfig,
    dimension: AblateDimension,
    values: &[f64],
    audio: &Path,
    index_path: &Path,
    spans_path: Option<&Path>,
    references: Option<&Path>,
    terms: Option<&Path>,
    out: &Path,
    provider_opts: &ProviderOpts,
    recall_k: usize,
) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let stream = load_audio(audio)?;
    let index = load_index(index_path, &config.lang)?;
    let provider = build_provider(provider_opts, config, Some(&index))?;

    let mut table = String::new();
    let payload: serde_json::Value = match dimension {
        AblateDimension::Window | AblateDimension::Stride => {
            if values.is_empty() {
                return Err(CliError::Input("--values must list sweep points".into()));
            }
            let spans_path = spans_path
                .ok_or_else(|| CliError::Input("recall sweeps need --spans".into()))?;
            let spans = resolve_spans(&read_span_records(spans_path)?, index.glossary())?;
            if spans.is_empty() {
                return Err(CliError::Input("span file has no records".into()));
            }
            let label = if dimension == AblateDimension::Window {
                "W (s)"
            } else {
                "stride (s)"
            };
            let _ = writeln!(table, "{label:>10} | Recall@{recall_k}");
            let _ = writeln!(table, "-----------+----------");
            let mut rows = Vec::new();
            for &value in values {
                let mut params = RetrieveParams {
                    window_s: config.window_s,
                    stride_s: config.stride_s,
                    k1: config.k1,
                    k2: config.k2,
                };
                match dimension {
                    AblateDimension::Window => params.window_s = value,
                    AblateDimension::Stride => params.stride_s = value,
                    AblateDimension::Retrieval => unreachable!(),
                }
                crate::stream::windows_per_chunk(config.chunk_s, params.stride_s)
                    .map_err(input)?;
                let recall = sweep_recall(
                    &stream, &index, provider.as_ref(), &spans, config.chunk_s, &params, recall_k,
                )?;
                let _ = writeln!(table, "{value:>10.2} | {:>8.4}", recall);
                rows.push(AblationRow {
                    value,
                    recall_at_k: recall,
                });
            }
            serde_json::json!({
                "schema": "ablation/1",
                "dimension": if dimension == AblateDimension::Window { "window" } else { "stride" },
                "recall_k": recall_k,
                "rows": rows,
            })
        }
        AblateDimension::Retrieval => {
            let references = references.ok_or_else(|| {
                CliError::Input("the retrieval dimension needs --references".into())
            })?;
            let terms = terms
                .ok_or_else(|| CliError::Input("the retrieval dimension needs --terms".into()))?;
            let refs = metrics::read_references(references).map_err(input)?;
            let occurrences = metrics::read_occurrences(terms).map_err(input)?;
            let params = SessionParams::from_config(config);
            let rows = retrieval_benefit(
                &stream,
                &index,
                provider.as_ref(),
                &refs,
                &occurrences,
                &params,
            )?;
            let _ = writeln!(table, " retrieval | term acc |   BLEU");
            let _ = writeln!(table, "-----------+----------+-------");
            for row in &rows {
                let _ = writeln!(
                    table,
                    "{:>10} | {:>8.4} | {:>6.2}",
                    if row.retrieval { "on" } else { "off" },
                    row.term_accuracy,
                    row.bleu
                );
            }
            let rows_json: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "retrieval": r.retrieval,
                        "term_accuracy": r.term_accuracy,
                        "bleu": r.bleu,
                    })
                })
                .collect();
            serde_json::json!({
                "schema": "ablation/1",
                "dimension": "retrieval",
                "rows": rows_json,
            })
        }
    };
    print!("{table}");
    let mut text = serde_json::to_string_pretty(&payload).map_err(runtime)?;
    text.push('\n');
    write_text(out, &text)?;
    let mut manifest = RunManifest::new("ablate", config.clone());
    manifest.record_input(audio).map_err(runtime)?;
    manifest.record_input(index_path).map_err(runtime)?;
    manifest.record_stage_ms("ablate", started.elapsed().as_secs_f64() * 1e3);
    manifest.write(&manifest_path_for(out)).map_err(runtime)?;
    Ok(())
}

fn cmd_bench(
    config: &RunConfig,
    audio: &Path,
    index_path: &Path,
    provider_opts: &ProviderOpts,
    policy_kind: PolicyKind,
    policy_endpoint: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let stream = load_audio(audio)?;
    let index = load_index(index_path, &config.lang)?;
    let provider = build_provider(provider_opts, config, Some(&index))?;
    let mut policy = build_policy(policy_kind, policy_endpoint, config)?;
    let params = SessionParams::from_config(config);
    let clock = SystemClock::new();
    let steps = run_session(
        &stream,
        &index,
        provider.as_ref(),
        policy.as_mut(),
        &params,
        &clock,
    )
    .map_err(runtime)?;
    let retriever_ms: f64 = steps.iter().map(|s| s.retriever_ms).sum();
    let policy_ms: f64 = steps.iter().map(|s| s.policy_latency_ms).sum();
    let ratio = overhead_ratio(retriever_ms, policy_ms).ok();
    println!(
        "chunks {} | retriever {:.3} ms | policy {:.3} ms | overhead ratio {}",
        steps.len(),
        retriever_ms,
        policy_ms,
        ratio
            .map(|r| format!("{r:.4}"))
            .unwrap_or_else(|| "n/a (zero policy time)".into())
    );
    let mut manifest = RunManifest::new("bench", config.clone());
    manifest.record_input(audio).map_err(runtime)?;
    manifest.record_input(index_path).map_err(runtime)?;
    manifest.record_stage_ms("retriever_total", retriever_ms);
    manifest.record_stage_ms("policy_total", policy_ms);
    if let Some(out) = out {
        manifest.write(out).map_err(runtime)?;
    }
    Ok(())
}
