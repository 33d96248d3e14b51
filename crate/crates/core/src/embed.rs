//! Unit-norm instruction embeddings.
//!
//! The built-in embedder hashes lowercased character 3-, 4- and 5-grams into
//! `d` signed buckets (term-frequency weighted) and L2-normalizes. Vectors from
//! a real sentence encoder can be imported from JSON Lines instead.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::jsonl;

pub const DEFAULT_DIM: usize = 256;
pub const NGRAM_MIN: usize = 3;
pub const NGRAM_MAX: usize = 5;

/// Vectors already this close to unit norm are kept verbatim on import.
const UNIT_NORM_SLACK: f64 = 1e-12;

/// Row-major embeddings aligned to corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
}

impl EmbeddingSet {
    /// Builds a set from raw rows. Rows are taken as-is; no normalization.
    pub fn from_rows(dim: usize, ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            if let Some(index) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue { id: id.clone(), index });
            }
            data.extend_from_slice(row);
        }
        if ids.len() != rows.len() {
            return Err(Error::InvalidArgument(format!("{} ids for {} vectors", ids.len(), rows.len())));
        }
        Ok(Self { dim, ids, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let recs: Vec<EmbeddingRecord> = self
            .ids
            .iter()
            .zip(self.rows())
            .map(|(id, v)| EmbeddingRecord { id: id.clone(), vector: v.to_vec() })
            .collect();
        jsonl::write_records(path, &recs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bucket index and sign (+1 / -1) of one n-gram under `seed`.
///
/// FNV-1a over the UTF-8 bytes followed by a splitmix64 finalizer, so the
/// result is identical on every platform.
pub fn hashed_feature(ngram: &[char], dim: usize, seed: u64) -> (usize, f64) {
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    let mut buf = [0u8; 4];
    for c in ngram {
        for &b in c.encode_utf8(&mut buf).as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    let h = splitmix64(h);
    let bucket = (h % dim as u64) as usize;
    let sign = if splitmix64(h ^ 0x5bd1_e995) >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

pub fn normalize_instruction(text: &str) -> Vec<char> {
    text.trim().to_lowercase().chars().collect()
}

/// Character n-grams (n = 3..=5) of the normalized instruction, in scan order.
pub fn char_ngrams(text: &str) -> Vec<Vec<char>> {
    let chars = normalize_instruction(text);
    let mut out = Vec::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        out.extend(chars.windows(n).map(<[char]>::to_vec));
    }
    out
}

/// Hashed, normalized embedding of a single instruction.
pub fn embed_text(id: &str, text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    let chars = normalize_instruction(text);
    if chars.len() < NGRAM_MIN {
        return Err(Error::DegenerateInput(id.to_string()));
    }
    let mut v = vec![0.0f64; dim];
    for n in NGRAM_MIN..=NGRAM_MAX {
        for gram in chars.windows(n) {
            let (bucket, sign) = hashed_feature(gram, dim, seed);
            v[bucket] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // every feature cancelled through signed collisions
    if norm == 0.0 {
        return Err(Error::DegenerateInput(id.to_string()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn embed_instructions(corpus: &Corpus, dim: usize, seed: u64) -> Result<EmbeddingSet> {
    if dim < 2 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 2".into()));
    }
    let rows = corpus
        .samples()
        .par_iter()
        .map(|s| embed_text(&s.id, &s.instruction, dim, seed))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_rows(dim, corpus.ids().map(String::from).collect(), rows)
}

fn read_vectors(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let mut seen = HashSet::new();
    let mut dim = None;
    let mut out = Vec::new();
    for (_, rec) in jsonl::read_records::<EmbeddingRecord>(path)? {
        let expected = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: rec.vector.len() });
        }
        if let Some(index) = rec.vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { id: rec.id, index });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Rescales to unit length unless already within rounding of it, so vectors
/// written by [`EmbeddingSet::write_jsonl`] read back bit-identical.
fn unit(id: &str, mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::DegenerateInput(id.to_string()));
    }
    if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// Reads an embeddings file in its own order.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let recs = read_vectors(path)?;
    let Some(first) = recs.first() else {
        return Err(Error::EmptyCorpus(path.display().to_string()));
    };
    let dim = first.vector.len();
    let mut ids = Vec::with_capacity(recs.len());
    let mut rows = Vec::with_capacity(recs.len());
    for r in recs {
        rows.push(unit(&r.id, r.vector)?);
        ids.push(r.id);
    }
    EmbeddingSet::from_rows(dim, ids, rows)
}

/// Imports `{"id", "vector"}` records and aligns them to corpus order.
///
/// Records for ids outside the corpus are ignored.
pub fn load_external_embeddings(path: &Path, corpus: &Corpus) -> Result<EmbeddingSet> {
    let recs = read_vectors(path)?;
    let dim = recs.first().map_or(0, |r| r.vector.len());
    let mut by_id: HashMap<String, Vec<f64>> = recs.into_iter().map(|r| (r.id, r.vector)).collect();
    let mut rows = Vec::with_capacity(corpus.len());
    for id in corpus.ids() {
        let v = by_id.remove(id).ok_or_else(|| Error::MissingId(id.to_string()))?;
        rows.push(unit(id, v)?);
    }
    EmbeddingSet::from_rows(dim, corpus.ids().map(String::from).collect(), rows)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
