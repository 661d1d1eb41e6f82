//! Score a streaming hypothesis against timed references: resegmentation,
//! corpus BLEU, terminology accuracy, and LAAL latency.
//!
//!     cargo run -p termstream --example score_session

use termstream::metrics::{
    score_stream, BleuSmoothing, HypToken, ReferenceSegment, TermOccurrence, Tokenization,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two reference sentences with source-side timings.
    let refs = vec![
        ReferenceSegment {
            index: 0,
            source_text: "recent work uses masked language models".into(),
            target_text: "最近的工作使用掩码语言模型".into(),
            source_start_s: 0.0,
            source_end_s: 3.8,
        },
        ReferenceSegment {
            index: 1,
            source_text: "to fill in masked portions of the text".into(),
            target_text: "来填充文本的掩码部分".into(),
            source_start_s: 3.8,
            source_end_s: 7.7,
        },
    ];
    // A streaming hypothesis: each token carries the end time of the chunk
    // that emitted it.
    let hyp = vec![
        HypToken { text: "最近的".into(), delay_s: 1.92 },
        HypToken { text: "工作使用".into(), delay_s: 3.84 },
        HypToken { text: "掩码语言模型".into(), delay_s: 3.84 },
        HypToken { text: "来填充文本".into(), delay_s: 5.76 },
        HypToken { text: "的掩码部分".into(), delay_s: 7.68 },
    ];
    let occurrences = vec![TermOccurrence {
        segment_index: 0,
        target_term: "掩码语言模型".into(),
    }];

    let (report, pairs) = score_stream(
        &hyp,
        &refs,
        &occurrences,
        Tokenization::Char,
        BleuSmoothing::Exp,
    )?;
    for pair in &pairs {
        let slice: String = pair.units.iter().map(|u| u.text.as_str()).collect();
        println!(
            "segment {} | slice {:?} | edit distance {}",
            pair.segment_index, slice, pair.edit_distance
        );
    }
    println!("\nBLEU            {:.2}", report.bleu);
    println!("term accuracy   {:.3}", report.term_accuracy);
    println!(
        "stream LAAL     {:.3} s over {} segments",
        report.stream_laal_s.unwrap_or(f64::NAN),
        report.segments_scored
    );
    println!("\nper-segment CSV:\n{}", report.per_segment_csv());
    Ok(())
}
