//! Chunk a speech stream and enumerate the sliding retrieval windows each
//! chunk unlocks.
//!
//!     cargo run -p termstream --example stream_windows

use termstream::stream::{chunk_stream, window_audio, windows_for_chunk, SpeechStream, TARGET_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A 5.0 s stream does not divide evenly by 0.96 s chunks: the final
    // chunk is 0.20 s and its windows clamp to the stream end.
    let stream = SpeechStream::new(vec![0.0; 5 * TARGET_RATE as usize], TARGET_RATE)?;
    let (chunk_s, window_s, stride_s) = (0.96, 1.92, 0.48);

    let chunks = chunk_stream(&stream, chunk_s)?;
    println!(
        "{:.1} s stream -> {} chunks of {chunk_s} s",
        stream.duration_s(),
        chunks.len()
    );
    for chunk in &chunks {
        let windows = windows_for_chunk(
            chunk.index,
            chunk.nominal_s,
            window_s,
            stride_s,
            stream.duration_s(),
        )?;
        println!(
            "chunk {} spans ({:.2}, {:.2}] s, {} windows:",
            chunk.index, chunk.start_s, chunk.end_s,
            windows.len()
        );
        for w in &windows {
            let audio = window_audio(&stream, w, window_s);
            println!(
                "  [{:>5.2}, {:>5.2}] s  pad {:.2} s  {} samples",
                w.start_s,
                w.end_s,
                w.pad_s,
                audio.samples.len()
            );
        }
    }
    Ok(())
}
