//! End-to-end run plus a sampling-rate sweep.
//!
//! ```bash
//! cargo run --release --example full_pipeline -- 20000
//! ```

use codesift::pipeline::{run_pipeline, run_sweep, RunConfig};
use codesift::select::DEFAULT_SWEEP;
use codesift::synth::{synthetic_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let n = std::env::args().nth(1).map_or(10_000, |s| s.parse().expect("n must be an integer"));
    let dir = std::env::temp_dir().join("codesift-full");
    std::fs::create_dir_all(&dir)?;
    let input = dir.join("corpus.jsonl");
    synthetic_corpus(&SynthConfig { n, seed: 1, ..Default::default() }).write_jsonl(&input)?;

    let cfg = RunConfig { input, out_dir: dir.join("run"), ..Default::default() };
    let report = run_pipeline(&cfg)?;
    for t in &report.timings {
        println!("{:<8} {:>8.2?}", t.stage, t.elapsed);
    }
    println!("selected {}", report.selected_count);
    print!("{}", report.comparison.to_table());
    for a in &report.artifacts {
        println!("  {}", a.display());
    }

    let sweep = run_sweep(&RunConfig { out_dir: dir.join("sweep"), ..cfg }, &DEFAULT_SWEEP)?;
    print!("{}", sweep.to_table());
    Ok(())
}
