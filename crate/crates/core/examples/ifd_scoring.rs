//! Score samples by instruction-following difficulty with the built-in n-gram model.
//!
//! Responses that the instruction makes easier to predict get IFD < 1; responses
//! the instruction barely helps with sit near 1 and rank first.

use codesift::ifd::{score_corpus, train_builtin_lm, NgramConfig, PerplexityProvider};
use codesift::synth::{synthetic_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_corpus(&SynthConfig { n: 2_000, seed: 11, ..Default::default() });
    let lm = train_builtin_lm(&corpus, NgramConfig { order: 3, add_k: 0.5 })?;
    let mut scores = score_corpus(&corpus, &PerplexityProvider::Ngram(lm), None)?;

    scores.sort_by(|a, b| b.ifd.total_cmp(&a.ifd));
    println!("{:<18} {:>10} {:>10} {:>8} {:>7}", "id", "ppl|instr", "ppl", "ifd", "tokens");
    for r in scores.iter().take(5).chain(scores.iter().rev().take(5).rev()) {
        println!("{:<18} {:>10.4} {:>10.4} {:>8.5} {:>7}", r.id, r.ppl_cond, r.ppl_uncond, r.ifd, r.n_tokens);
    }
    let above = scores.iter().filter(|r| r.ifd > 1.0).count();
    println!("{above} of {} samples have IFD > 1", scores.len());
    Ok(())
}
