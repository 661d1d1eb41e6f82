//! End-to-end effect of retrieval on terminology translation: run the same
//! scripted glossary-aware policy with retrieval on and off, over a talk
//! whose term translations are unguessable random strings, and compare
//! terminology accuracy.
//!
//!     cargo run -p termstream --example retrieval_benefit

use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use termstream::cli::retrieval_benefit;
use termstream::driver::SessionParams;
use termstream::embedding::{GoldSpan, MockProvider, OracleProvider};
use termstream::glossary::{Glossary, TermId};
use termstream::index::build_index;
use termstream::lang::Lang;
use termstream::metrics::{ReferenceSegment, TermOccurrence};
use termstream::stream::{SpeechStream, TARGET_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zh = Lang::new("zh");
    let chunk_s = 1.92;
    let n_terms = 8usize;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1234);

    // Translations a policy cannot guess from the source term.
    let random_cjk = |rng: &mut rand_chacha::ChaCha12Rng| -> String {
        (0..6)
            .map(|_| char::from_u32(0x4E00 + rng.random_range(0..0x2000u32)).unwrap())
            .collect()
    };
    let pairs: Vec<_> = (0..n_terms)
        .map(|i| {
            (
                format!("concept{i}"),
                BTreeMap::from([(zh.clone(), random_cjk(&mut rng))]),
            )
        })
        .collect();
    let glossary = Glossary::from_pairs(pairs, std::slice::from_ref(&zh))?;
    let translations: Vec<String> = (0..n_terms as u32)
        .map(|i| glossary.translation(TermId(i), &zh).unwrap().to_string())
        .collect();
    let index = build_index(glossary, &MockProvider::new(77, 24))?;

    // One term spoken per chunk; references expect its translation there.
    let spans: Vec<GoldSpan> = (0..n_terms)
        .map(|k| GoldSpan {
            term_id: TermId(k as u32),
            start_s: k as f64 * chunk_s + 0.5,
            end_s: k as f64 * chunk_s + 1.2,
        })
        .collect();
    let provider = OracleProvider::new(&index, spans, 77);
    let stream = SpeechStream::new(
        vec![0.0; (n_terms as f64 * chunk_s * TARGET_RATE as f64) as usize],
        TARGET_RATE,
    )?;
    let refs: Vec<ReferenceSegment> = (0..n_terms)
        .map(|k| ReferenceSegment {
            index: k,
            source_text: format!("concept{k}"),
            target_text: translations[k].clone(),
            source_start_s: k as f64 * chunk_s,
            source_end_s: (k + 1) as f64 * chunk_s,
        })
        .collect();
    let occurrences: Vec<TermOccurrence> = (0..n_terms)
        .map(|k| TermOccurrence {
            segment_index: k,
            target_term: translations[k].clone(),
        })
        .collect();

    let params = SessionParams {
        chunk_s,
        window_s: 1.92,
        stride_s: 0.48,
        k1: 10,
        k2: 10,
        budget_rate: Default::default(),
        decoding: Default::default(),
        lang: zh,
        history: Default::default(),
    };
    let rows = retrieval_benefit(&stream, &index, &provider, &refs, &occurrences, &params)?;
    println!(" retrieval | term accuracy |  BLEU");
    println!("-----------+---------------+------");
    for row in rows {
        println!(
            "{:>10} | {:>13.3} | {:>5.2}",
            if row.retrieval { "on" } else { "off" },
            row.term_accuracy,
            row.bleu
        );
    }
    Ok(())
}
