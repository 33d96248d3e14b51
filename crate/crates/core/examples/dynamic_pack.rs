//! Dynamic pack against the padding baselines.

use codesift::pack::{compare_strategies, pack_items, plan_dynamic_pack, PackItem, PackScope};
use codesift::synth::{synthetic_corpus, SynthConfig};
use codesift::tokenize::ByteTokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // The hand-checkable case: lengths [9, 5, 4, 3] in a context of 10.
    let items: Vec<PackItem> =
        [9, 5, 4, 3].iter().enumerate().map(|(i, &l)| PackItem::new(format!("s{i}"), l)).collect();
    let plan = plan_dynamic_pack(&items, 10, 4, PackScope::Batch)?;
    for bin in &plan.batches[0] {
        let ids: Vec<&str> = bin.segments.iter().map(|s| s.id.as_str()).collect();
        println!("row {ids:?} uses {}/{}", bin.used, bin.capacity);
    }
    print!("{}", compare_strategies(&items, 10, 4, PackScope::Batch)?.to_table());
    println!();

    let corpus = synthetic_corpus(&SynthConfig { n: 20_000, seed: 1, ..Default::default() });
    let items = pack_items(&corpus, &ByteTokenizer::default())?;
    for scope in [PackScope::Batch, PackScope::Epoch] {
        print!("{}", compare_strategies(&items, 4096, 256, scope)?.to_table());
        println!();
    }
    Ok(())
}
