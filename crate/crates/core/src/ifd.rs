//! Instruction Following Difficulty.
//!
//! For a sample with instruction `I` and code tokens `C_1..C_N`:
//!
//! ```text
//! PPL(C | I) = exp(-(1/N) Σ_j log P(C_j | I, C_<j))
//! PPL(C)     = exp(-(1/N) Σ_j log P(C_j | C_<j))
//! IFD        = PPL(C | I) / PPL(C) = exp(mean_nll_cond - mean_nll_uncond)
//! ```
//!
//! Only code tokens are scored. Per-token probabilities come from a
//! [`PerplexityProvider`]: either a corpus-trained add-k byte n-gram model or
//! log-probs exported from a real language model.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::tokenize::{ByteTokenizer, TokenCounter, TokenId, TokenizedSample, VOCAB_SIZE};

/// Largest n-gram order whose keys fit in a `u64`.
pub const MAX_ORDER: usize = 7;

/// Tables with at most this many cells are stored densely.
const DENSE_LIMIT: u64 = 1 << 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub order: usize,
    pub add_k: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self { order: 3, add_k: 0.5 }
    }
}

#[derive(Debug, Clone)]
enum CountTable {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

impl CountTable {
    fn with_cells(cells: u64) -> Self {
        if cells <= DENSE_LIMIT {
            CountTable::Dense(vec![0; cells as usize])
        } else {
            CountTable::Sparse(HashMap::new())
        }
    }

    fn bump(&mut self, key: u64) {
        match self {
            CountTable::Dense(v) => v[key as usize] += 1,
            CountTable::Sparse(m) => *m.entry(key).or_insert(0) += 1,
        }
    }

    fn get(&self, key: u64) -> u32 {
        match self {
            CountTable::Dense(v) => v[key as usize],
            CountTable::Sparse(m) => m.get(&key).copied().unwrap_or(0),
        }
    }
}

/// Add-k smoothed byte n-gram model.
///
/// Counts every (context, next token) pair for all context lengths
/// `0..order`, so positions near the start of a stream fall back to the
/// longest context actually available.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    add_k: f64,
    /// `pairs[l]` counts (context of length l, next token)
    pairs: Vec<CountTable>,
    /// `contexts[l]` counts contexts of length l that have a successor
    contexts: Vec<CountTable>,
}

fn encode(ctx: &[TokenId]) -> u64 {
    ctx.iter().fold(0u64, |acc, &t| acc * VOCAB_SIZE as u64 + t as u64)
}

impl NgramModel {
    pub fn new(cfg: NgramConfig) -> Result<Self> {
        if cfg.order == 0 || cfg.order > MAX_ORDER {
            return Err(Error::InvalidArgument(format!("n-gram order must be in 1..={MAX_ORDER}, got {}", cfg.order)));
        }
        if !(cfg.add_k > 0.0 && cfg.add_k.is_finite()) {
            return Err(Error::InvalidArgument("add_k must be positive".into()));
        }
        let v = VOCAB_SIZE as u64;
        let pairs = (0..cfg.order).map(|l| CountTable::with_cells(v.pow(l as u32 + 1))).collect();
        let contexts = (0..cfg.order).map(|l| CountTable::with_cells(v.pow(l as u32))).collect();
        Ok(Self { order: cfg.order, add_k: cfg.add_k, pairs, contexts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    /// Adds one token stream to the counts.
    pub fn observe(&mut self, stream: &[TokenId]) {
        let v = VOCAB_SIZE as u64;
        for (p, &t) in stream.iter().enumerate() {
            for l in 0..self.order.min(p + 1) {
                let ctx = encode(&stream[p - l..p]);
                self.pairs[l].bump(ctx * v + t as u64);
                self.contexts[l].bump(ctx);
            }
        }
    }

    /// `ln P(token | context)`, using at most the last `order - 1` context tokens.
    pub fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let l = context.len().min(self.order - 1);
        let ctx = encode(&context[context.len() - l..]);
        let pair = self.pairs[l].get(ctx * VOCAB_SIZE as u64 + token as u64) as f64;
        let total = self.contexts[l].get(ctx) as f64;
        ((pair + self.add_k) / (total + self.add_k * VOCAB_SIZE as f64)).ln()
    }

    /// Sum of `ln P(code_j | prefix, code_<j)` over all code tokens.
    fn code_log_likelihood(&self, prefix: &[TokenId], code: &[TokenId]) -> f64 {
        let keep = (self.order - 1).min(prefix.len());
        let mut stream: Vec<TokenId> = Vec::with_capacity(keep + code.len());
        stream.extend_from_slice(&prefix[prefix.len() - keep..]);
        let mut sum = NeumaierSum::default();
        for &t in code {
            let from = stream.len().saturating_sub(self.order - 1);
            sum.add(self.log_prob(&stream[from..], t));
            stream.push(t);
        }
        sum.total()
    }
}

/// Trains the stand-in model on every sample's instruction-then-code byte stream.
pub fn train_builtin_lm(corpus: &Corpus, cfg: NgramConfig) -> Result<NgramModel> {
    let mut model = NgramModel::new(cfg)?;
    let mut stream = Vec::new();
    for s in corpus.samples() {
        stream.clear();
        stream.extend(s.instruction.bytes().map(TokenId::from));
        stream.extend(s.code.bytes().map(TokenId::from));
        model.observe(&stream);
    }
    Ok(model)
}

/// Per-token natural-log probabilities for one sample's code tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub id: String,
    pub cond_logprobs: Vec<f64>,
    pub uncond_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ExternalLogprobs {
    by_id: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl ExternalLogprobs {
    fn check(rec: &LogprobRecord, expected: usize) -> Result<()> {
        for arr in [&rec.cond_logprobs, &rec.uncond_logprobs] {
            if arr.len() != expected {
                return Err(Error::LengthMismatch { id: rec.id.clone(), expected, got: arr.len() });
            }
            for (index, &x) in arr.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFiniteValue { id: rec.id.clone(), index });
                }
                if x > 0.0 {
                    return Err(Error::PositiveLogProb { id: rec.id.clone(), index });
                }
            }
        }
        Ok(())
    }

    /// Builds a provider from in-memory records; lengths are checked
    /// pairwise only.
    pub fn from_records(records: Vec<LogprobRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for rec in records {
            Self::check(&rec, rec.cond_logprobs.len())?;
            if rec.cond_logprobs.is_empty() {
                return Err(Error::ZeroLengthCode(rec.id));
            }
            if by_id.contains_key(&rec.id) {
                return Err(Error::DuplicateId(rec.id));
            }
            by_id.insert(rec.id, (rec.cond_logprobs, rec.uncond_logprobs));
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: &str) -> Result<(&[f64], &[f64])> {
        self.by_id.get(id).map(|(c, u)| (c.as_slice(), u.as_slice())).ok_or_else(|| Error::MissingId(id.to_string()))
    }
}

/// Loads `{"id", "cond_logprobs", "uncond_logprobs"}` records and checks them
/// against the corpus: every id present, both arrays of length `code_len` as
/// reported by `counter`, all values finite and `<= 0`.
pub fn load_external_logprobs(path: &Path, corpus: &Corpus, counter: &dyn TokenCounter) -> Result<ExternalLogprobs> {
    let mut by_id: HashMap<String, LogprobRecord> = HashMap::new();
    for (_, rec) in jsonl::read_records::<LogprobRecord>(path)? {
        if by_id.contains_key(&rec.id) {
            return Err(Error::DuplicateId(rec.id));
        }
        by_id.insert(rec.id.clone(), rec);
    }
    let mut records = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let rec = by_id.remove(&s.id).ok_or_else(|| Error::MissingId(s.id.clone()))?;
        let expected = counter.counts(s)?.code_len;
        ExternalLogprobs::check(&rec, expected)?;
        records.push(rec);
    }
    ExternalLogprobs::from_records(records)
}

pub fn write_external_logprobs(path: &Path, records: &[LogprobRecord]) -> Result<()> {
    jsonl::write_records(path, records)
}

#[derive(Debug, Clone)]
pub enum PerplexityProvider {
    Ngram(NgramModel),
    External(ExternalLogprobs),
}

impl PerplexityProvider {
    /// Summed code-token log-likelihoods `(conditional, unconditional)` and N.
    fn log_likelihoods(&self, sample: &TokenizedSample) -> Result<(f64, f64, usize)> {
        if sample.code_len == 0 {
            return Err(Error::ZeroLengthCode(sample.id.clone()));
        }
        match self {
            PerplexityProvider::Ngram(m) => Ok((
                m.code_log_likelihood(&sample.instruction_tokens, &sample.code_tokens),
                m.code_log_likelihood(&[], &sample.code_tokens),
                sample.code_tokens.len(),
            )),
            PerplexityProvider::External(e) => {
                let (c, u) = e.get(&sample.id)?;
                if c.len() != sample.code_len {
                    return Err(Error::LengthMismatch {
                        id: sample.id.clone(),
                        expected: sample.code_len,
                        got: c.len(),
                    });
                }
                Ok((neumaier(c), neumaier(u), c.len()))
            }
        }
    }
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn neumaier(xs: &[f64]) -> f64 {
    let mut s = NeumaierSum::default();
    xs.iter().for_each(|&x| s.add(x));
    s.total()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfdRecord {
    pub id: String,
    pub ppl_cond: f64,
    pub ppl_uncond: f64,
    pub ifd: f64,
    pub n_tokens: usize,
    pub mean_nll_cond: f64,
    pub mean_nll_uncond: f64,
}

pub fn conditional_ppl(sample: &TokenizedSample, provider: &PerplexityProvider) -> Result<f64> {
    let (c, _, n) = provider.log_likelihoods(sample)?;
    Ok((-c / n as f64).exp())
}

pub fn unconditional_ppl(sample: &TokenizedSample, provider: &PerplexityProvider) -> Result<f64> {
    let (_, u, n) = provider.log_likelihoods(sample)?;
    Ok((-u / n as f64).exp())
}

pub fn ifd_score(sample: &TokenizedSample, provider: &PerplexityProvider) -> Result<IfdRecord> {
    let (c, u, n) = provider.log_likelihoods(sample)?;
    let mean_nll_cond = -c / n as f64;
    let mean_nll_uncond = -u / n as f64;
    Ok(IfdRecord {
        id: sample.id.clone(),
        ppl_cond: mean_nll_cond.exp(),
        ppl_uncond: mean_nll_uncond.exp(),
        ifd: (mean_nll_cond - mean_nll_uncond).exp(),
        n_tokens: n,
        mean_nll_cond,
        mean_nll_uncond,
    })
}

/// Scores every sample in corpus order.
///
/// With an external provider only `code_len` of the tokenized sample is used;
/// `code_lens` overrides the byte-level length when the log-probs came from a
/// different tokenizer.
pub fn score_corpus(
    corpus: &Corpus,
    provider: &PerplexityProvider,
    code_lens: Option<&dyn TokenCounter>,
) -> Result<Vec<IfdRecord>> {
    let tok = ByteTokenizer::default();
    corpus
        .samples()
        .par_iter()
        .map(|s| {
            let mut ts = tok.tokenize(s)?;
            if let Some(counter) = code_lens {
                ts.code_len = counter.counts(s)?.code_len;
            }
            ifd_score(&ts, provider)
        })
        .collect()
}

pub fn write_ifd_records(path: &Path, records: &[IfdRecord]) -> Result<()> {
    jsonl::write_records(path, records)
}

pub fn read_ifd_records(path: &Path) -> Result<Vec<IfdRecord>> {
    Ok(jsonl::read_records(path)?.into_iter().map(|(_, r)| r).collect())
}
