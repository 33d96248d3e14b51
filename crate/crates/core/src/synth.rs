//! Deterministic synthetic instruction–code corpora.
//!
//! Instructions are drawn from a handful of topics so clustering has real
//! structure to find; code lengths follow a clipped log-normal so packing sees
//! a realistic long-tailed length distribution.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::corpus::{Corpus, Sample};

const TOPICS: [(&str, &[&str]); 10] = [
    ("sorting", &["sort", "merge", "quicksort", "heap", "partition", "pivot", "ascending", "comparator"]),
    ("strings", &["string", "substring", "reverse", "palindrome", "unicode", "split", "regex", "whitespace"]),
    ("http", &["request", "endpoint", "header", "status", "json", "client", "retry", "timeout"]),
    ("database", &["table", "query", "index", "transaction", "schema", "join", "migration", "cursor"]),
    ("math", &["prime", "factorial", "matrix", "gcd", "fibonacci", "modulo", "integral", "vector"]),
    ("files", &["file", "directory", "path", "stream", "buffer", "encoding", "permissions", "glob"]),
    ("graphs", &["graph", "node", "edge", "dijkstra", "traversal", "cycle", "adjacency", "topological"]),
    ("ml", &["model", "gradient", "tensor", "loss", "epoch", "dataset", "layer", "optimizer"]),
    ("concurrency", &["thread", "mutex", "channel", "async", "future", "lock", "worker", "semaphore"]),
    ("parsing", &["token", "parser", "grammar", "lexer", "ast", "expression", "syntax", "literal"]),
];

const VERBS: [&str; 6] = ["Write", "Implement", "Create", "Design", "Build", "Develop"];
const LANGS: [&str; 5] = ["Python", "Rust", "JavaScript", "Java", "Go"];
const GLUE: [&str; 8] = ["that", "which", "using", "with", "for", "and", "handles", "given"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    /// Mean of the (unclipped) code-length distribution, in bytes.
    pub mean_code_len: f64,
    /// Log-space standard deviation of code lengths.
    pub sigma: f64,
    pub max_code_len: usize,
    pub topics: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n: 1000, mean_code_len: 780.0, sigma: 0.7, max_code_len: 3800, topics: 10, seed: 0 }
    }
}

/// `n` log-normal lengths with the given arithmetic mean, clipped to `[min, max]`.
pub fn lognormal_lengths(n: usize, mean: f64, sigma: f64, min: usize, max: usize, seed: u64) -> Vec<usize> {
    let mu = mean.ln() - sigma * sigma / 2.0;
    let dist = LogNormal::new(mu, sigma).expect("valid log-normal parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (dist.sample(&mut rng).round() as usize).clamp(min, max)).collect()
}

fn instruction(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let mut s = format!("{} a {} function", VERBS.choose(rng).unwrap(), LANGS.choose(rng).unwrap());
    for _ in 0..rng.random_range(6..14) {
        s.push(' ');
        s.push_str(GLUE.choose(rng).unwrap());
        s.push(' ');
        s.push_str(words.choose(rng).unwrap());
    }
    s.push('.');
    s
}

fn code(rng: &mut ChaCha8Rng, words: &[&str], len: usize) -> String {
    let mut s = String::with_capacity(len + 64);
    s.push_str("def solve(data):\n");
    while s.len() < len {
        let a = words.choose(rng).unwrap();
        let b = words.choose(rng).unwrap();
        match rng.random_range(0..4) {
            0 => s.push_str(&format!("    {a}_{} = {b}(data)\n", rng.random_range(0..10))),
            1 => s.push_str(&format!("    for {a} in {b}:\n        yield {a}\n")),
            2 => s.push_str(&format!("    if not {a}:\n        return {b}\n")),
            _ => s.push_str(&format!("    # {a} {b}\n")),
        }
    }
    s.truncate(len);
    s
}

/// Builds a corpus; also returns each sample's generating topic.
pub fn synthetic_corpus_with_topics(cfg: &SynthConfig) -> (Corpus, Vec<usize>) {
    let topics = cfg.topics.clamp(1, TOPICS.len());
    let lens = lognormal_lengths(cfg.n, cfg.mean_code_len, cfg.sigma, 1, cfg.max_code_len, cfg.seed ^ 0xc0de);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = Vec::with_capacity(cfg.n);
    let samples = lens
        .into_iter()
        .enumerate()
        .map(|(i, len)| {
            let t = rng.random_range(0..topics);
            labels.push(t);
            let words = TOPICS[t].1;
            Sample {
                id: format!("{}-{i:06}", TOPICS[t].0),
                instruction: instruction(&mut rng, words),
                code: code(&mut rng, words, len),
            }
        })
        .collect();
    let corpus = Corpus::new(samples, format!("synthetic(seed={})", cfg.seed)).expect("generated ids are unique");
    (corpus, labels)
}

pub fn synthetic_corpus(cfg: &SynthConfig) -> Corpus {
    synthetic_corpus_with_topics(cfg).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig { n: 200, seed: 3, ..Default::default() };
        let a = synthetic_corpus(&cfg);
        assert_eq!(a, synthetic_corpus(&cfg));
        assert_eq!(a.len(), 200);
        assert!(a.samples().iter().all(|s| s.code.len() <= cfg.max_code_len));
    }

    #[test]
    fn lognormal_mean_is_close() {
        let v = lognormal_lengths(50_000, 800.0, 0.6, 1, usize::MAX, 1);
        let mean = v.iter().sum::<usize>() as f64 / v.len() as f64;
        assert!((mean / 800.0 - 1.0).abs() < 0.02, "{mean}");
    }
}
