//! Embed instructions with hashed character n-grams and cluster them.

use codesift::cluster::{kmeans_fit, KMeansConfig};
use codesift::embed::embed_instructions;
use codesift::synth::{synthetic_corpus_with_topics, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, topics) =
        synthetic_corpus_with_topics(&SynthConfig { n: 3_000, topics: 5, seed: 2, ..Default::default() });
    let emb = embed_instructions(&corpus, 256, 0)?;
    let c = kmeans_fit(&emb, &KMeansConfig { k: 5, seed: 42, ..Default::default() })?;

    println!("iterations {}, inertia {:.4}", c.iterations_run, c.inertia);
    println!("inertia per iteration: {:?}", c.inertia_trace.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());

    // contingency of generating topic vs cluster
    let mut table = vec![vec![0usize; 5]; c.k];
    for (&a, &t) in c.assignment.iter().zip(&topics) {
        table[a][t] += 1;
    }
    let majority: usize = table.iter().map(|row| row.iter().max().copied().unwrap_or(0)).sum();
    for (j, row) in table.iter().enumerate() {
        println!("cluster {j}: {row:?}");
    }
    println!("purity {:.3}", majority as f64 / corpus.len() as f64);
    Ok(())
}
