//! Sliding-window retrieval over a synthetic talk with planted term spans:
//! the oracle embedder makes windows containing a term point at that term's
//! vector, so the per-chunk hits show exactly when each term becomes
//! retrievable.
//!
//!     cargo run -p termstream --example chunk_retrieval

use std::collections::BTreeMap;
use termstream::config::NullClock;
use termstream::embedding::{GoldSpan, MockProvider, OracleProvider};
use termstream::glossary::{Glossary, TermId};
use termstream::index::build_index;
use termstream::lang::Lang;
use termstream::retriever::{retrieve_for_chunk, RetrieveParams};
use termstream::stream::{chunk_stream, SpeechStream, TARGET_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zh = Lang::new("zh");
    let pairs: Vec<_> = (0..40)
        .map(|i| {
            (
                format!("concept{i}"),
                BTreeMap::from([(zh.clone(), format!("概念{i}"))]),
            )
        })
        .collect();
    let glossary = Glossary::from_pairs(pairs, &[zh])?;
    let index = build_index(glossary, &MockProvider::new(9, 32))?;

    // Three spans planted across a 10 s talk.
    let spans = vec![
        GoldSpan { term_id: TermId(3), start_s: 1.1, end_s: 1.6 },
        GoldSpan { term_id: TermId(17), start_s: 4.3, end_s: 5.2 },
        GoldSpan { term_id: TermId(29), start_s: 8.0, end_s: 8.4 },
    ];
    let provider = OracleProvider::new(&index, spans, 9);
    let stream = SpeechStream::new(vec![0.0; 10 * TARGET_RATE as usize], TARGET_RATE)?;
    let params = RetrieveParams {
        window_s: 1.92,
        stride_s: 0.48,
        k1: 10,
        k2: 10,
    };

    for chunk in chunk_stream(&stream, 1.92)? {
        let timed = retrieve_for_chunk(&index, &provider, &stream, &chunk, &params, &NullClock)?;
        let preview: Vec<String> = timed
            .set
            .hits
            .iter()
            .take(3)
            .map(|h| {
                format!(
                    "{}@{:+.3}",
                    index.glossary().term(h.term_id).unwrap(),
                    h.score
                )
            })
            .collect();
        println!(
            "chunk {} (delay {:.2} s): {} candidates | top: {}",
            chunk.index,
            chunk.end_s,
            timed.set.hits.len(),
            preview.join(", ")
        );
    }
    Ok(())
}
