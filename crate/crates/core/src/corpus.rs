//! Instruction–code corpora: JSON Lines ingestion, validation and summaries.
//!
//! Records are read in file order, and that order is the tie-breaker for every
//! later stage. The loader accepts differing source schemas through a
//! [`FieldMapping`] and always writes back the canonical
//! `{"id", "instruction", "code"}` form.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::jsonl;
use crate::tokenize::TokenCounter;

/// One instruction–response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub instruction: String,
    pub code: String,
}

/// Which JSON fields hold the id, instruction and response.
///
/// Candidate lists are tried in order; the first present field wins. When the
/// id field is absent from a record, the id `line-<k>` is assigned from its
/// 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub id: Option<String>,
    pub instruction: Vec<String>,
    pub code: Vec<String>,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            instruction: vec!["instruction".into()],
            code: vec!["output".into(), "code".into()],
        }
    }
}

impl FieldMapping {
    fn pick<'a>(record: &'a Value, names: &'a [String]) -> Option<(&'a str, &'a Value)> {
        names.iter().find_map(|n| record.get(n).map(|v| (n.as_str(), v)))
    }

    fn parse(&self, line: usize, record: &Value) -> Result<Sample> {
        if !record.is_object() {
            return Err(Error::MalformedRecord { line, reason: "record is not a JSON object".into() });
        }
        let id = match self.id.as_deref().and_then(|f| record.get(f)) {
            None => format!("line-{line}"),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(Error::MalformedRecord { line, reason: "id must be a string or number".into() }),
        };
        let text = |names: &[String], what: &str| -> Result<String> {
            match Self::pick(record, names) {
                Some((_, Value::String(s))) => Ok(s.clone()),
                Some((name, _)) => {
                    Err(Error::MalformedRecord { line, reason: format!("field {name:?} is not a string") })
                }
                None => Err(Error::MalformedRecord { line, reason: format!("missing {what} field (tried {names:?})") }),
            }
        };
        let sample =
            Sample { instruction: text(&self.instruction, "instruction")?, code: text(&self.code, "response")?, id };
        check_sample(&sample)?;
        Ok(sample)
    }
}

fn check_sample(s: &Sample) -> Result<()> {
    if s.id.is_empty() {
        return Err(Error::EmptyField { id: s.id.clone(), field: "id".into() });
    }
    for (field, value) in [("instruction", &s.instruction), ("code", &s.code)] {
        if value.trim().is_empty() {
            return Err(Error::EmptyField { id: s.id.clone(), field: field.into() });
        }
    }
    Ok(())
}

/// An ordered, validated, immutable collection of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<Sample>,
    source: String,
}

/// Result of a lenient load: the surviving corpus plus every rejected record.
#[derive(Debug)]
pub struct LoadReport {
    pub corpus: Corpus,
    pub rejected: Vec<Error>,
}

impl Corpus {
    /// Builds a corpus, enforcing unique non-empty ids and non-empty texts.
    pub fn new(samples: Vec<Sample>, source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        if samples.is_empty() {
            return Err(Error::EmptyCorpus(source));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            check_sample(s)?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { samples, source })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// The samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Corpus::new(samples, format!("{} (subset)", self.source))
    }

    /// Writes the canonical `{"id", "instruction", "code"}` schema.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write_records(path, &self.samples)
    }
}

/// Loads a corpus, aborting on the first invalid record.
pub fn load_corpus(path: &Path, mapping: &FieldMapping) -> Result<Corpus> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    jsonl::for_each_line(path, |line, value| {
        let s = mapping.parse(line, &value)?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id));
        }
        samples.push(s);
        Ok(())
    })?;
    Corpus::new(samples, path.display().to_string())
}

/// Loads a corpus, collecting invalid records instead of failing on them.
///
/// Unparseable lines are still collected; only I/O failures abort.
pub fn load_corpus_lenient(path: &Path, mapping: &FieldMapping) -> Result<LoadReport> {
    use std::fs::File;
    use std::io::{BufRead, BufReader};

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| Error::MalformedRecord { line: line_no, reason: e.to_string() })
            .and_then(|v| mapping.parse(line_no, &v));
        match parsed {
            Ok(s) if seen.contains(&s.id) => rejected.push(Error::DuplicateId(s.id)),
            Ok(s) => {
                seen.insert(s.id.clone());
                samples.push(s);
            }
            Err(e) => rejected.push(e),
        }
    }
    if !rejected.is_empty() {
        log::warn!("{}: skipped {} invalid records", path.display(), rejected.len());
    }
    let corpus = Corpus::new(samples, path.display().to_string())?;
    Ok(LoadReport { corpus, rejected })
}

/// Ids whose total token count exceeds `context_len`, in corpus order.
pub fn validate_for_context(corpus: &Corpus, counter: &dyn TokenCounter, context_len: usize) -> Result<Vec<String>> {
    if context_len == 0 {
        return Err(Error::InvalidArgument("context_len must be >= 1".into()));
    }
    let mut out = Vec::new();
    for s in corpus.samples() {
        if counter.counts(s)?.total_len > context_len {
            out.push(s.id.clone());
        }
    }
    Ok(out)
}

/// Nearest-rank summary of a length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub p50: usize,
    pub p90: usize,
    pub p99: usize,
}

impl LengthSummary {
    pub fn from_lengths(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let total: u128 = sorted.iter().map(|&x| x as u128).sum();
        Some(Self {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean: total as f64 / sorted.len() as f64,
            p50: nearest_rank(&sorted, 50),
            p90: nearest_rank(&sorted, 90),
            p99: nearest_rank(&sorted, 99),
        })
    }
}

/// Nearest-rank percentile of an ascending slice: the value at rank ⌈p·n/100⌉.
pub fn nearest_rank(sorted: &[usize], percentile: u32) -> usize {
    let n = sorted.len();
    let rank = (percentile as usize * n).div_ceil(100).max(1);
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n: usize,
    pub instruction: LengthSummary,
    pub code: LengthSummary,
    pub total: LengthSummary,
    pub context_len: Option<usize>,
    pub exceeding_context: usize,
    pub deduplication: String,
}

pub fn corpus_stats(corpus: &Corpus, counter: &dyn TokenCounter, context_len: Option<usize>) -> Result<CorpusStats> {
    let mut instr = Vec::with_capacity(corpus.len());
    let mut code = Vec::with_capacity(corpus.len());
    let mut total = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let c = counter.counts(s)?;
        instr.push(c.instruction_len);
        code.push(c.code_len);
        total.push(c.total_len);
    }
    let exceeding_context = context_len.map(|cl| total.iter().filter(|&&t| t > cl).count()).unwrap_or(0);
    // n >= 1 is a Corpus invariant, so the summaries always exist.
    let summary = |v: &[usize]| LengthSummary::from_lengths(v).expect("non-empty corpus");
    Ok(CorpusStats {
        n: corpus.len(),
        instruction: summary(&instr),
        code: summary(&code),
        total: summary(&total),
        context_len,
        exceeding_context,
        deduplication: "not performed".into(),
    })
}
