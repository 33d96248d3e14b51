//! Write a synthetic instruction–code corpus to JSON Lines.
//!
//! ```bash
//! cargo run --release --example synth_corpus -- corpus.jsonl 75000 7
//! ```

use std::path::PathBuf;

use codesift::synth::{synthetic_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic.jsonl".into()));
    let n = args.next().map_or(5_000, |s| s.parse().expect("n must be an integer"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));

    let corpus = synthetic_corpus(&SynthConfig { n, seed, ..Default::default() });
    corpus.write_jsonl(&out)?;
    println!("wrote {} samples to {}", corpus.len(), out.display());
    Ok(())
}
