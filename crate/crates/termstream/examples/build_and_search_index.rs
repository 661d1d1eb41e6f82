//! Build a term index from an in-memory glossary and run cosine top-k
//! queries against it.
//!
//!     cargo run -p termstream --example build_and_search_index

use std::collections::BTreeMap;
use termstream::embedding::{EmbeddingProvider, MockProvider};
use termstream::glossary::Glossary;
use termstream::index::build_index;
use termstream::lang::Lang;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zh = Lang::new("zh");
    let terms = [
        ("masked language model", "掩码语言模型"),
        ("attention mechanism", "注意力机制"),
        ("beam search", "束搜索"),
        ("BERT", "BERT"),
        ("fine-tuning", "微调"),
        ("byte pair encoding", "字节对编码"),
    ];
    let pairs: Vec<_> = terms
        .iter()
        .map(|(term, translation)| {
            (
                term.to_string(),
                BTreeMap::from([(zh.clone(), translation.to_string())]),
            )
        })
        .collect();
    let glossary = Glossary::from_pairs(pairs, std::slice::from_ref(&zh))?;

    // The mock provider hashes term text into a reproducible unit vector;
    // swap in a RemoteProvider to use a real text encoder.
    let provider = MockProvider::new(42, 64);
    let index = build_index(glossary, &provider)?;
    println!("indexed {} terms at dimension {}", index.len(), index.dim());

    for query_text in ["masked language model", "BERT"] {
        let query = provider.embed_term(query_text)?;
        println!("\ntop-3 for {query_text:?}:");
        for hit in index.search(&query, 3)? {
            println!(
                "  {:<24} score {:+.4}",
                index.glossary().term(hit.term_id).unwrap(),
                hit.score
            );
        }
    }

    // Persist and reload: the vector file plus a glossary JSON-lines sidecar.
    let dir = std::env::temp_dir().join("termstream_example_index");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("demo.tidx");
    index.save(&path)?;
    let reloaded = termstream::index::TermIndex::load(&path, &[zh])?;
    println!("\nreloaded {} terms from {}", reloaded.len(), path.display());
    Ok(())
}
