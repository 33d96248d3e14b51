//! Load a corpus under a non-default schema and summarize token lengths.

use codesift::corpus::{corpus_stats, load_corpus_lenient, FieldMapping};
use codesift::tokenize::ByteTokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("codesift-corpus-stats");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("alpaca_style.jsonl");
    // Alpaca-style export: no ids, response under "response", one broken line.
    let lines = [
        r#"{"prompt": "Reverse a string in Python.", "response": "def rev(s):\n    return s[::-1]"}"#,
        r#"{"prompt": "Sum a list.", "response": "sum(xs)"}"#,
        r#"{"prompt": "broken", "#,
        r#"{"prompt": "Check whether n is prime.", "response": "def is_prime(n):\n    return n > 1 and all(n % d for d in range(2, int(n**0.5) + 1))"}"#,
    ];
    std::fs::write(&path, lines.join("\n"))?;

    let mapping = FieldMapping { id: None, instruction: vec!["prompt".into()], code: vec!["response".into()] };
    let report = load_corpus_lenient(&path, &mapping)?;
    for e in &report.rejected {
        println!("rejected: {e}");
    }
    println!("ids: {:?}", report.corpus.ids().collect::<Vec<_>>());

    let stats = corpus_stats(&report.corpus, &ByteTokenizer::default(), Some(64))?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
