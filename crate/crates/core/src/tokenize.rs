//! Token sequences and token counts.
//!
//! The built-in tokenizer is byte-level: each UTF-8 byte is one token id in
//! `0..256`, and id 256 is reserved as the end-of-sample separator. Counts from
//! a real model tokenizer can be supplied through an external counts file
//! instead; packing only ever needs lengths.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::jsonl;

pub type TokenId = u16;

/// Token id of the end-of-sample separator.
pub const SEPARATOR: TokenId = 256;

/// Byte ids plus the separator.
pub const VOCAB_SIZE: usize = 257;

/// Default structural overhead: one separator per sample.
pub const DEFAULT_OVERHEAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub instruction_len: usize,
    pub code_len: usize,
    /// `instruction_len + code_len + overhead`
    pub total_len: usize,
}

/// Anything that can report per-sample token counts.
pub trait TokenCounter: Sync {
    fn counts(&self, sample: &Sample) -> Result<TokenCounts>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSample {
    pub id: String,
    pub instruction_tokens: Vec<TokenId>,
    pub code_tokens: Vec<TokenId>,
    pub instruction_len: usize,
    pub code_len: usize,
    pub total_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteTokenizer {
    overhead: usize,
}

impl Default for ByteTokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_OVERHEAD)
    }
}

impl ByteTokenizer {
    pub fn new(overhead: usize) -> Self {
        Self { overhead }
    }

    pub fn overhead(&self) -> usize {
        self.overhead
    }

    pub fn encode(text: &str) -> Vec<TokenId> {
        text.bytes().map(TokenId::from).collect()
    }

    pub fn tokenize(&self, sample: &Sample) -> Result<TokenizedSample> {
        let instruction_tokens = Self::encode(&sample.instruction);
        let code_tokens = Self::encode(&sample.code);
        if code_tokens.is_empty() {
            return Err(Error::EmptyCode(sample.id.clone()));
        }
        Ok(TokenizedSample {
            id: sample.id.clone(),
            instruction_len: instruction_tokens.len(),
            code_len: code_tokens.len(),
            total_len: instruction_tokens.len() + code_tokens.len() + self.overhead,
            instruction_tokens,
            code_tokens,
        })
    }
}

impl TokenCounter for ByteTokenizer {
    fn counts(&self, sample: &Sample) -> Result<TokenCounts> {
        let code_len = sample.code.len();
        if code_len == 0 {
            return Err(Error::EmptyCode(sample.id.clone()));
        }
        let instruction_len = sample.instruction.len();
        Ok(TokenCounts { instruction_len, code_len, total_len: instruction_len + code_len + self.overhead })
    }
}

/// One line of an external counts file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub id: String,
    pub instruction_len: usize,
    pub code_len: usize,
}

/// Token counts produced by some other tokenizer, keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct ExternalCounts {
    counts: HashMap<String, (usize, usize)>,
    overhead: usize,
}

impl ExternalCounts {
    pub fn new(overhead: usize) -> Self {
        Self { counts: HashMap::new(), overhead }
    }

    pub fn insert(&mut self, id: impl Into<String>, instruction_len: usize, code_len: usize) {
        self.counts.insert(id.into(), (instruction_len, code_len));
    }

    pub fn lookup(&self, id: &str) -> Result<(usize, usize)> {
        self.counts.get(id).copied().ok_or_else(|| Error::MissingId(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

impl TokenCounter for ExternalCounts {
    fn counts(&self, sample: &Sample) -> Result<TokenCounts> {
        let (instruction_len, code_len) = self.lookup(&sample.id)?;
        if code_len == 0 {
            return Err(Error::EmptyCode(sample.id.clone()));
        }
        Ok(TokenCounts { instruction_len, code_len, total_len: instruction_len + code_len + self.overhead })
    }
}

pub fn load_external_counts(path: &Path, overhead: usize) -> Result<ExternalCounts> {
    let mut out = ExternalCounts::new(overhead);
    for (_, rec) in jsonl::read_records::<CountRecord>(path)? {
        if out.counts.contains_key(&rec.id) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.insert(rec.id, rec.instruction_len, rec.code_len);
    }
    Ok(out)
}

pub fn write_external_counts(path: &Path, records: &[CountRecord]) -> Result<()> {
    jsonl::write_records(path, records)
}

/// Built-in byte counts or an imported table.
#[derive(Debug, Clone)]
pub enum TokenCountProvider {
    Builtin(ByteTokenizer),
    External(ExternalCounts),
}

impl TokenCounter for TokenCountProvider {
    fn counts(&self, sample: &Sample) -> Result<TokenCounts> {
        match self {
            TokenCountProvider::Builtin(t) => t.counts(sample),
            TokenCountProvider::External(e) => e.counts(sample),
        }
    }
}
