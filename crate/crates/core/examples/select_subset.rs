//! Compare the four selection strategies on one corpus.

use codesift::cluster::{kmeans_fit, KMeansConfig};
use codesift::embed::embed_instructions;
use codesift::ifd::{score_corpus, train_builtin_lm, NgramConfig, PerplexityProvider};
use codesift::select::{select, Strategy};
use codesift::synth::{synthetic_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_corpus(&SynthConfig { n: 5_000, seed: 5, ..Default::default() });
    let clustering = kmeans_fit(&embed_instructions(&corpus, 256, 0)?, &KMeansConfig::default())?;
    let lm = train_builtin_lm(&corpus, NgramConfig::default())?;
    let scores = score_corpus(&corpus, &PerplexityProvider::Ngram(lm), None)?;
    let sizes = clustering.cluster_sizes();
    println!("cluster sizes {sizes:?}");

    for strategy in Strategy::ALL {
        let m = select(strategy, &corpus, Some(&clustering), Some(&scores), 40.0, 7)?;
        let picked: Vec<usize> = m.per_cluster().iter().map(|c| c.selected).collect();
        let mean_ifd = m.selected_indices().iter().map(|&i| scores[i].ifd).sum::<f64>() / m.selected_count as f64;
        println!("{strategy:<14} n={:<5} mean ifd {mean_ifd:.5} per-cluster {picked:?}", m.selected_count);
    }
    Ok(())
}
