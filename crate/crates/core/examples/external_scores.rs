//! Drive the pipeline with token counts, embeddings and log-probabilities
//! produced by external models.
//!
//! The files here are written by hand; in practice they come from a real
//! tokenizer, sentence encoder and causal LM run over the same ids.

use codesift::embed::{embed_instructions, EmbeddingRecord};
use codesift::ifd::{write_external_logprobs, LogprobRecord};
use codesift::jsonl;
use codesift::pipeline::{run_pipeline, RunConfig};
use codesift::synth::{synthetic_corpus, SynthConfig};
use codesift::tokenize::{write_external_counts, CountRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("codesift-external");
    let corpus = synthetic_corpus(&SynthConfig { n: 400, seed: 9, ..Default::default() });
    let input = dir.join("corpus.jsonl");
    std::fs::create_dir_all(&dir)?;
    corpus.write_jsonl(&input)?;

    // Pretend a subword tokenizer yields roughly one token per four bytes.
    let counts: Vec<CountRecord> = corpus
        .samples()
        .iter()
        .map(|s| CountRecord {
            id: s.id.clone(),
            instruction_len: s.instruction.len().div_ceil(4),
            code_len: s.code.len().div_ceil(4),
        })
        .collect();
    write_external_counts(&dir.join("counts.jsonl"), &counts)?;

    // A model that finds the response a little easier with the instruction.
    let logprobs: Vec<LogprobRecord> = counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let easier = 0.02 * (i % 7) as f64;
            LogprobRecord {
                id: c.id.clone(),
                cond_logprobs: vec![-1.0 + easier; c.code_len],
                uncond_logprobs: vec![-1.0; c.code_len],
            }
        })
        .collect();
    write_external_logprobs(&dir.join("logprobs.jsonl"), &logprobs)?;

    let emb = embed_instructions(&corpus, 64, 3)?;
    let recs: Vec<EmbeddingRecord> = emb
        .ids()
        .iter()
        .zip(emb.rows())
        .map(|(id, v)| EmbeddingRecord { id: id.clone(), vector: v.iter().map(|x| x * 10.0).collect() })
        .collect();
    jsonl::write_records(&dir.join("embeddings.jsonl"), &recs)?;

    let cfg = RunConfig {
        input,
        external_counts: Some(dir.join("counts.jsonl")),
        external_embeddings: Some(dir.join("embeddings.jsonl")),
        external_logprobs: Some(dir.join("logprobs.jsonl")),
        context_len: 1024,
        batch_size: 32,
        out_dir: dir.join("run"),
        ..Default::default()
    };
    let report = run_pipeline(&cfg)?;
    println!("selected {} samples", report.selected_count);
    print!("{}", report.comparison.to_table());
    Ok(())
}
