//! Synthesize per-chunk term maps under the Standard / None / All-Wrong
//! robustness patterns, with budgeted negatives, and render one utterance
//! as a chat-message training instance.
//!
//!     cargo run -p termstream --example synthesize_term_maps

use rand::SeedableRng;
use std::collections::BTreeMap;
use termstream::glossary::Glossary;
use termstream::lang::Lang;
use termstream::synth::{
    sst_example_json, synth_sst_term_maps, AlignedWord, NegativesSource, PatternWeights,
    PhraseSpan,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zh = Lang::new("zh");
    let pairs: Vec<_> = (0..30)
        .map(|i| {
            (
                format!("term{i}"),
                BTreeMap::from([(zh.clone(), format!("译{i}"))]),
            )
        })
        .collect();
    let glossary = Glossary::from_pairs(pairs, std::slice::from_ref(&zh))?;

    let alignment = vec![AlignedWord {
        word: "utterance".into(),
        start_s: 0.0,
        end_s: 7.6,
    }];
    let phrases = vec![
        PhraseSpan { text: "term4".into(), start_s: 0.4, end_s: 1.0 },
        PhraseSpan { text: "term11".into(), start_s: 2.2, end_s: 2.9 },
        PhraseSpan { text: "term23".into(), start_s: 6.0, end_s: 6.6 },
    ];
    let weights = PatternWeights {
        standard: 0.6,
        none: 0.2,
        all_wrong: 0.2,
    };
    let negatives = NegativesSource::Random {
        glossary: &glossary,
    };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
    let samples = synth_sst_term_maps(
        &alignment, &phrases, &glossary, &zh, 1.92, &weights, &negatives, &mut rng,
    )?;

    for sample in &samples {
        let golds: Vec<&str> = sample
            .entries
            .iter()
            .filter(|e| e.is_gold)
            .map(|e| e.term.as_str())
            .collect();
        println!(
            "chunk {} | {:?} | {} entries | gold {:?}",
            sample.chunk_index,
            sample.pattern,
            sample.entries.len(),
            golds
        );
    }

    let instance = sst_example_json("utt0042", &samples, &zh, None, "audio");
    println!(
        "\ntraining instance:\n{}",
        serde_json::to_string_pretty(&instance)?
    );
    Ok(())
}
