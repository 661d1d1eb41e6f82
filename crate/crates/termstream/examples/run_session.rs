//! Run a full translate-or-wait session with a scripted glossary-aware
//! policy and print the event log it produces.
//!
//!     cargo run -p termstream --example run_session

use std::collections::BTreeMap;
use termstream::config::NullClock;
use termstream::driver::{
    assemble_hypothesis, run_session, SessionParams, TermMapPolicy, write_event_log,
};
use termstream::embedding::{GoldSpan, MockProvider, OracleProvider};
use termstream::glossary::{Glossary, TermId};
use termstream::index::build_index;
use termstream::lang::Lang;
use termstream::stream::{SpeechStream, TARGET_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zh = Lang::new("zh");
    let terms = [
        ("ownership", "责任"),
        ("small wins", "小胜利"),
        ("salesmanship", "销售技巧"),
        ("gains", "成果"),
    ];
    let pairs: Vec<_> = terms
        .iter()
        .map(|(t, tr)| {
            (
                t.to_string(),
                BTreeMap::from([(zh.clone(), tr.to_string())]),
            )
        })
        .collect();
    let glossary = Glossary::from_pairs(pairs, std::slice::from_ref(&zh))?;
    let index = build_index(glossary, &MockProvider::new(5, 24))?;

    let spans = vec![
        GoldSpan { term_id: TermId(0), start_s: 0.8, end_s: 1.3 },
        GoldSpan { term_id: TermId(1), start_s: 2.4, end_s: 3.0 },
        GoldSpan { term_id: TermId(2), start_s: 4.5, end_s: 5.3 },
    ];
    let provider = OracleProvider::new(&index, spans, 5);
    let stream = SpeechStream::new(vec![0.0; 6 * TARGET_RATE as usize], TARGET_RATE)?;

    let params = SessionParams {
        chunk_s: 1.92,
        window_s: 1.92,
        stride_s: 0.48,
        k1: 10,
        k2: 4,
        budget_rate: Default::default(),
        decoding: Default::default(),
        lang: zh,
        history: Default::default(),
    };
    // TermMapPolicy reads the term_map block of its own prompt and emits the
    // target side of each entry; a remote policy would see the same prompt.
    let mut policy = TermMapPolicy { filler: None };
    let steps = run_session(&stream, &index, &provider, &mut policy, &params, &NullClock)?;

    for step in &steps {
        println!(
            "chunk {} | delay {:.2} s | retrieved {:>2} | emitted {:?}",
            step.chunk_index,
            step.delay_s,
            step.retrieved.hits.len(),
            step.tokens
        );
    }
    let (tokens, text) = assemble_hypothesis(&steps);
    println!("\nhypothesis ({} tokens): {text}", tokens.len());

    let path = std::env::temp_dir().join("termstream_example_events.jsonl");
    write_event_log(&path, &steps)?;
    println!("event log written to {}", path.display());
    Ok(())
}
