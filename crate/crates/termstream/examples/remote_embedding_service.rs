//! The remote embedding protocol end to end: an in-process stub service
//! implementing `POST /embed`, queried through the remote provider. A real
//! deployment serves the same JSON shape from a speech/text encoder.
//!
//!     cargo run -p termstream --example remote_embedding_service

use std::io::{Read, Write};
use std::net::TcpListener;
use std::time::Duration;
use termstream::embedding::{EmbeddingProvider, MockProvider};
use termstream::remote::RemoteProvider;
use termstream::stream::WindowAudio;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = format!("http://{}", listener.local_addr()?);
    println!("stub embedding service at {endpoint}/embed");

    // Stub service: answers each request with a mock embedding of the
    // payload, the same contract a GPU-backed encoder service would honor.
    std::thread::spawn(move || {
        let backend = MockProvider::new(7, 64);
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut buf = Vec::new();
            let mut byte = [0u8; 1];
            while !buf.ends_with(b"\r\n\r\n") && stream.read(&mut byte).is_ok_and(|n| n == 1) {
                buf.push(byte[0]);
            }
            let head = String::from_utf8_lossy(&buf).to_string();
            let len: usize = head
                .lines()
                .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            let mut body = vec![0u8; len];
            if stream.read_exact(&mut body).is_err() {
                continue;
            }
            let request: serde_json::Value = match serde_json::from_slice(&body) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let data = request["data"].as_str().unwrap_or("");
            let vector = backend.embed_term(data).unwrap();
            let response = serde_json::json!({ "vector": vector }).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response}",
                response.len()
            );
        }
    });

    let provider = RemoteProvider::new(&endpoint, 64, Duration::from_secs(5), 3);
    let term_vector = provider.embed_term("attention mechanism")?;
    println!(
        "embed_term -> {} dims, norm {:.6}",
        term_vector.len(),
        term_vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
    );

    let window = WindowAudio {
        start_s: 0.0,
        end_s: 0.01,
        pad_s: 0.0,
        samples: vec![0.1; 160],
    };
    let window_vector = provider.embed_window(&window)?;
    println!(
        "embed_window -> {} dims, norm {:.6}",
        window_vector.len(),
        window_vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
    );
    println!("identical inputs give identical vectors: {}",
        provider.embed_term("attention mechanism")? == term_vector);
    Ok(())
}
