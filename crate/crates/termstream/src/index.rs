//! Exact top-k cosine search over unit-norm term vectors.
//!
//! The index is a flat matrix scanned in full on every query: glossaries at
//! the scale this harness targets fit in memory, and exactness keeps the
//! brute-force oracle tests meaningful. The index is immutable after build
//! and safe to share across concurrent readers.

use crate::embedding::{EmbeddingProvider, UNIT_NORM_TOL};
use crate::glossary::{Glossary, TermId};
use crate::lang::Lang;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TIDX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index dim {expected}, query dim {got}")]
    Dim { expected: usize, got: usize },
    #[error("embedding term {term:?} failed: {source}")]
    Embed {
        term: String,
        #[source]
        source: crate::embedding::EmbedError,
    },
    #[error("term {term:?} embedded with norm {norm}, expected 1")]
    NotUnit { term: String, norm: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index file {path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error(transparent)]
    Glossary(#[from] crate::glossary::GlossaryError),
}

/// One search result: scores are plain dot products, which equal cosine
/// similarity because all vectors are unit norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchHit {
    pub term_id: TermId,
    pub score: f32,
}

/// A glossary with one embedding row per entry, row order matching entry
/// order.
pub struct TermIndex {
    dim: usize,
    glossary: Glossary,
    vectors: Vec<f32>,
}

/// Embeds every glossary term and assembles the index. Any embedding failure
/// aborts the build, naming the offending term.
pub fn build_index(
    glossary: Glossary,
    embedder: &dyn EmbeddingProvider,
) -> Result<TermIndex, IndexError> {
    let dim = embedder.dim();
    let mut vectors = Vec::with_capacity(glossary.len() * dim);
    for entry in glossary.entries() {
        let v = embedder
            .embed_term(&entry.source_term)
            .map_err(|source| IndexError::Embed {
                term: entry.source_term.clone(),
                source,
            })?;
        if v.len() != dim {
            return Err(IndexError::Dim {
                expected: dim,
                got: v.len(),
            });
        }
        let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(IndexError::NotUnit {
                term: entry.source_term.clone(),
                norm,
            });
        }
        vectors.extend_from_slice(&v);
    }
    Ok(TermIndex {
        dim,
        glossary,
        vectors,
    })
}

impl TermIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.glossary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glossary.is_empty()
    }

    pub fn glossary(&self) -> &Glossary {
        &self.glossary
    }

    pub fn vector(&self, id: TermId) -> &[f32] {
        let i = id.as_usize();
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-k by dot product: returns `min(k, len)` hits in descending
    /// score order, ties broken by ascending term id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::Dim {
                expected: self.dim,
                got: query.len(),
            });
        }
        debug_assert!(
            (query.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() - 1.0).abs()
                < UNIT_NORM_TOL,
            "search queries must be unit norm"
        );
        let mut hits: Vec<SearchHit> = (0..self.len())
            .map(|i| {
                let id = TermId(i as u32);
                let score = self
                    .vector(id)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| a * b)
                    .sum::<f32>();
                SearchHit { term_id: id, score }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then(a.term_id.cmp(&b.term_id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// Writes the vector file at `path` and the glossary JSON-lines sidecar
    /// next to it.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let rows: Vec<&[f32]> = (0..self.len())
            .map(|i| self.vector(TermId(i as u32)))
            .collect();
        write_vectors_file(path, self.dim, &rows).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let sidecar = glossary_sidecar_path(path);
        fs::write(&sidecar, self.glossary.to_jsonl()).map_err(|source| IndexError::Io {
            path: sidecar.display().to_string(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: &Path, langs: &[Lang]) -> Result<Self, IndexError> {
        let (dim, rows) = read_vectors_file(path).map_err(|e| IndexError::Corrupt {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let sidecar = glossary_sidecar_path(path);
        let glossary = Glossary::load(&sidecar, langs)?;
        if glossary.len() != rows.len() {
            return Err(IndexError::Corrupt {
                path: path.display().to_string(),
                msg: format!(
                    "vector count {} does not match glossary size {}",
                    rows.len(),
                    glossary.len()
                ),
            });
        }
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            vectors.extend_from_slice(&row);
        }
        Ok(Self {
            dim,
            glossary,
            vectors,
        })
    }
}

/// Path of the glossary JSON-lines stored alongside an index vector file.
pub fn glossary_sidecar_path(index_path: &Path) -> PathBuf {
    index_path.with_extension("glossary.jsonl")
}

/// Binary layout shared by the term index and the embedding file store:
/// magic `TIDX`, u32 version, u32 count, u32 dim (little-endian), then
/// `count * dim` little-endian f32 values.
pub fn write_vectors_file(path: &Path, dim: usize, rows: &[&[f32]]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(rows.len() as u32).to_le_bytes())?;
    file.write_all(&(dim as u32).to_le_bytes())?;
    for row in rows {
        assert_eq!(row.len(), dim, "all rows must share the declared dim");
        for value in *row {
            file.write_all(&value.to_le_bytes())?;
        }
    }
    file.flush()
}

pub fn read_vectors_file(path: &Path) -> Result<(usize, Vec<Vec<f32>>), std::io::Error> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut file = std::io::BufReader::new(fs::File::open(path)?);
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| bad("file shorter than header"))?;
    if &header[0..4] != MAGIC {
        return Err(bad("bad magic, expected TIDX"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != count * dim * 4 {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            count * dim * 4,
            payload.len()
        )));
    }
    let rows = (0..count)
        .map(|r| {
            (0..dim)
                .map(|c| {
                    let at = (r * dim + c) * 4;
                    f32::from_le_bytes(payload[at..at + 4].try_into().unwrap())
                })
                .collect()
        })
        .collect();
    Ok((dim, rows))
}
