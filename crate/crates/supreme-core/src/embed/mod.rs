//! Term embedding storage and the deterministic stub embedder.
//!
//! Vector file layout, little-endian:
//!   magic "SPEM" | version u8 = 1 | count u32 | dim u32 | count*dim f32
//! with an aligned sidecar `<file>.terms` holding one term per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rng::{term_stream_index, RngFactory};

pub const EMBED_MAGIC: &[u8; 4] = b"SPEM";
pub const EMBED_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("format error: {0}")]
    Format(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Case-folded terms mapped to unit-norm embedding vectors of one shared
/// dimension.
#[derive(Debug, Clone)]
pub struct TermEmbeddingStore {
    dim: usize,
    terms: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

fn fold(term: &str) -> String {
    term.trim().to_lowercase()
}

fn normalize(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::Format("zero or non-finite vector cannot be normalized".into()));
    }
    // Already unit within the similarity gate: keep the bits unchanged so
    // that normalization is idempotent and save/load preserves vectors
    // exactly. One division pass always lands inside this window.
    if (norm - 1.0).abs() <= 1e-6 {
        return Ok(());
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

impl TermEmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(EmbedError::Format("embedding dimension must be positive".into()));
        }
        Ok(TermEmbeddingStore { dim, terms: Vec::new(), vectors: Vec::new(), index: HashMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Insert a term; the vector is normalized to unit length. Duplicate
    /// terms (after case folding) are rejected.
    pub fn insert(&mut self, term: &str, mut vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(EmbedError::Format(format!(
                "vector of dim {} in a store of dim {}",
                vector.len(),
                self.dim
            )));
        }
        let key = fold(term);
        if key.is_empty() {
            return Err(EmbedError::Format("empty term".into()));
        }
        if self.index.contains_key(&key) {
            return Err(EmbedError::Alignment(format!("duplicate term {key:?} after case folding")));
        }
        normalize(&mut vector)?;
        self.index.insert(key.clone(), self.terms.len());
        self.terms.push(key);
        self.vectors.push(vector);
        Ok(())
    }

    /// Exact lookup on the case-folded term.
    pub fn get(&self, term: &str) -> Option<&[f32]> {
        self.index.get(&fold(term)).map(|&i| self.vectors[i].as_slice())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(&fold(term))
    }

    fn terms_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".terms");
        PathBuf::from(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(EMBED_MAGIC)?;
        w.write_all(&[EMBED_VERSION])?;
        let count = u32::try_from(self.terms.len())
            .map_err(|_| EmbedError::Format("too many terms for the header".into()))?;
        w.write_all(&count.to_le_bytes())?;
        let dim = u32::try_from(self.dim)
            .map_err(|_| EmbedError::Format("dimension too large for the header".into()))?;
        w.write_all(&dim.to_le_bytes())?;
        for v in &self.vectors {
            for &x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;

        let mut tw = BufWriter::new(File::create(Self::terms_path(path))?);
        for t in &self.terms {
            writeln!(tw, "{t}")?;
        }
        tw.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| EmbedError::Format("file ends inside magic".into()))?;
        if &magic != EMBED_MAGIC {
            return Err(EmbedError::Format(format!("bad magic {magic:?}, expected {EMBED_MAGIC:?}")));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)
            .map_err(|_| EmbedError::Format("file ends inside version".into()))?;
        if version[0] != EMBED_VERSION {
            return Err(EmbedError::Format(format!("unsupported version {}", version[0])));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| EmbedError::Format("file ends inside count".into()))?;
        let count = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(|_| EmbedError::Format("file ends inside dim".into()))?;
        let dim = u32::from_le_bytes(b4) as usize;
        if dim == 0 {
            return Err(EmbedError::Format("dimension must be positive".into()));
        }
        let mut payload = vec![0u8; count * dim * 4];
        r.read_exact(&mut payload).map_err(|_| {
            EmbedError::Format(format!("payload shorter than {count} x {dim} floats"))
        })?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(EmbedError::Format("trailing bytes after payload".into()));
        }

        let terms_file = Self::terms_path(path);
        let terms: Vec<String> = BufReader::new(File::open(&terms_file).map_err(|e| {
            EmbedError::Alignment(format!("missing terms sidecar {}: {e}", terms_file.display()))
        })?)
        .lines()
        .collect::<std::io::Result<_>>()?;
        if terms.len() != count {
            return Err(EmbedError::Alignment(format!(
                "{} terms in sidecar but {count} vectors in payload",
                terms.len()
            )));
        }

        let mut store = TermEmbeddingStore::new(dim)?;
        for (i, term) in terms.iter().enumerate() {
            let mut v = Vec::with_capacity(dim);
            for c in payload[i * dim * 4..(i + 1) * dim * 4].chunks_exact(4) {
                v.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
            // Re-normalize on load so cosine code can rely on unit vectors.
            store.insert(term, v)?;
        }
        Ok(store)
    }
}

/// Deterministic pseudo-embedding: a unit vector drawn from a stream keyed by
/// (seed, case-folded term). Stands in for a clinical text encoder so the
/// pipeline runs without one; distinct terms land nearly orthogonal at
/// realistic dimensions.
pub fn stub_embed(term: &str, dim: usize, seed: u64) -> Result<Vec<f32>> {
    if dim < 2 {
        return Err(EmbedError::Format(format!("stub embedding needs dim >= 2, got {dim}")));
    }
    let folded = fold(term);
    let mut rng = RngFactory::new(seed).substream("stub-embed", term_stream_index(&folded));
    let mut v: Vec<f32> = (0..dim)
        .map(|_| <f32 as crate::nn::Element>::standard_normal(&mut rng))
        .collect();
    normalize(&mut v)?;
    Ok(v)
}
