//! Turn a word alignment plus noun-phrase spans into (speech window,
//! positive terms) retriever training pairs.
//!
//!     cargo run -p termstream --example synthesize_pairs

use termstream::synth::{
    dedup_candidates, normalize_phrase, pair_windows, term_duration_stats, AlignedWord,
    PhraseSpan, PAIR_STRIDE_S, PAIR_WINDOW_S,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alignment = vec![
        AlignedWord { word: "the".into(), start_s: 0.00, end_s: 0.18 },
        AlignedWord { word: "masked".into(), start_s: 0.18, end_s: 0.55 },
        AlignedWord { word: "language".into(), start_s: 0.55, end_s: 1.02 },
        AlignedWord { word: "model".into(), start_s: 1.02, end_s: 1.40 },
        AlignedWord { word: "uses".into(), start_s: 1.40, end_s: 1.75 },
        AlignedWord { word: "attention".into(), start_s: 2.30, end_s: 2.95 },
        AlignedWord { word: "everywhere".into(), start_s: 2.95, end_s: 3.60 },
    ];
    // Parser output, before normalization and containment dedup.
    let raw = vec![
        PhraseSpan { text: "Masked Language Model,".into(), start_s: 0.18, end_s: 1.40 },
        PhraseSpan { text: "language model".into(), start_s: 0.55, end_s: 1.40 },
        PhraseSpan { text: "Attention".into(), start_s: 2.30, end_s: 2.95 },
    ];
    let mut phrases: Vec<PhraseSpan> = raw
        .into_iter()
        .map(|mut p| {
            p.text = normalize_phrase(&p.text);
            p
        })
        .collect();
    phrases = dedup_candidates(&phrases);
    println!("surviving phrases after normalize + dedup:");
    for p in &phrases {
        println!("  {:?} [{:.2}, {:.2}] s", p.text, p.start_s, p.end_s);
    }

    let pairs = pair_windows(&alignment, &phrases, PAIR_WINDOW_S, PAIR_STRIDE_S)?;
    println!("\nwindow pairs (1.92 s window, 0.96 s stride):");
    for pair in &pairs {
        println!(
            "  [{:>4.2}, {:>4.2}] s -> {:?}",
            pair.start_s, pair.end_s, pair.positives
        );
    }

    let stats = term_duration_stats(&phrases)?;
    println!(
        "\nspan durations: mean {:.2} s, p50 {:.2} s, p99 {:.2} s",
        stats.mean_s, stats.p50_s, stats.p99_s
    );
    Ok(())
}
