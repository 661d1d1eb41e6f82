//! # termstream
//!
//! A deterministic simulator and evaluation harness for glossary-grounded
//! simultaneous speech translation. The library replays recorded speech as
//! fixed-duration chunks, runs sliding-window terminology retrieval over the
//! incoming audio, drives an incremental translate-or-wait policy with exact
//! delay accounting, synthesizes retriever and policy training data, and
//! scores the resulting token streams for latency, quality, and terminology
//! fidelity.
//!
//! The primary interface is the library itself, demonstrated by the runnable
//! programs under `examples/`:
//!
//! ```text
//! cargo run -p termstream --example build_and_search_index
//! cargo run -p termstream --example stream_windows
//! cargo run -p termstream --example chunk_retrieval
//! cargo run -p termstream --example run_session
//! cargo run -p termstream --example score_session
//! cargo run -p termstream --example synthesize_pairs
//! cargo run -p termstream --example synthesize_term_maps
//! cargo run -p termstream --example contrastive_gradcheck
//! cargo run -p termstream --example window_stride_ablation
//! cargo run -p termstream --example retrieval_benefit
//! cargo run -p termstream --example remote_embedding_service
//! ```
//!
//! A thin `termstream` binary exposes the same pipelines as subcommands
//! (`index`, `synth`, `simulate`, `retrieve`, `evaluate`, `ablate`, `bench`)
//! for scripted experiment runs; see the README for the file formats.

pub mod cli;
pub mod config;
pub mod contrastive;
pub mod driver;
pub mod embedding;
pub mod glossary;
pub mod index;
pub mod lang;
pub mod metrics;
pub mod remote;
pub mod retriever;
pub mod stream;
pub mod synth;

pub use config::{Clock, NullClock, RunConfig, RunManifest, SeedTree, SystemClock};
pub use contrastive::{finite_diff_check, infonce_grad, infonce_loss, ContrastiveBatch};
pub use embedding::{attention_pool, l2_normalize, EmbeddingProvider, MockProvider, OracleProvider};
pub use glossary::{Glossary, GlossaryEntry, TermId};
pub use index::{build_index, SearchHit, TermIndex};
pub use lang::Lang;
pub use metrics::{bleu, laal, recall_at_k, resegment, term_accuracy, MetricReport, Tokenization};
pub use retriever::{aggregate, retrieve_for_chunk, RetrievalHit, RetrievedSet};
pub use stream::{chunk_stream, windows_for_chunk, Chunk, SpeechStream, Window};
