//! Sweep the retrieval window length and stride over a synthetic talk and
//! tabulate Recall@10, the way the `ablate` subcommand does.
//!
//!     cargo run -p termstream --example window_stride_ablation

use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use termstream::cli::sweep_recall;
use termstream::embedding::{GoldSpan, MockProvider, OracleProvider};
use termstream::glossary::{Glossary, TermId};
use termstream::index::build_index;
use termstream::lang::Lang;
use termstream::retriever::RetrieveParams;
use termstream::stream::{SpeechStream, TARGET_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zh = Lang::new("zh");
    let pairs: Vec<_> = (0..120)
        .map(|i| {
            (
                format!("term{i}"),
                BTreeMap::from([(zh.clone(), format!("译{i}"))]),
            )
        })
        .collect();
    let glossary = Glossary::from_pairs(pairs, &[zh])?;
    let index = build_index(glossary, &MockProvider::new(31, 32))?;

    // 20 spans over a 45 s talk, durations up to ~1.4 s.
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
    let duration_s = 45.0;
    let spans: Vec<GoldSpan> = (0..20)
        .map(|k| {
            let start = 0.4 + k as f64 * 2.2;
            GoldSpan {
                term_id: TermId(rng.random_range(0..120)),
                start_s: start,
                end_s: start + rng.random_range(0.2..1.4),
            }
        })
        .collect();
    let provider = OracleProvider::new(&index, spans.clone(), 31);
    let stream = SpeechStream::new(
        vec![0.0; (duration_s * TARGET_RATE as f64) as usize],
        TARGET_RATE,
    )?;
    let chunk_s = 1.92;

    println!("window sweep (stride 0.48 s):");
    println!("   W (s) | Recall@10");
    for window_s in [0.96, 1.92, 2.88, 3.84] {
        let params = RetrieveParams {
            window_s,
            stride_s: 0.48,
            k1: 10,
            k2: 10,
        };
        let recall = sweep_recall(&stream, &index, &provider, &spans, chunk_s, &params, 10)?;
        println!("   {window_s:>5.2} | {recall:>8.4}");
    }

    println!("\nstride sweep (window 1.92 s):");
    println!("   d (s) | Recall@10");
    for stride_s in [0.96, 0.48, 0.24, 0.12] {
        let params = RetrieveParams {
            window_s: 1.92,
            stride_s,
            k1: 10,
            k2: 10,
        };
        let recall = sweep_recall(&stream, &index, &provider, &spans, chunk_s, &params, 10)?;
        println!("   {stride_s:>5.2} | {recall:>8.4}");
    }
    Ok(())
}
