//! Acceptance criteria, one line each.
//!
//! Runs without the libtest harness so every criterion prints a single
//! PASS/FAIL line with its measurement and runtime; the process exits non-zero
//! if any criterion fails.
//!
//! Set `CODESIFT_REAL_CORPORA=a.jsonl,b.jsonl` to add real corpora to the
//! padding-direction check.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use codesift::cluster::{kmeans_fit, Clustering, KMeansConfig};
use codesift::corpus::{load_corpus_lenient, Corpus, FieldMapping, Sample};
use codesift::embed::EmbeddingSet;
use codesift::ifd::{
    ifd_score, score_corpus, train_builtin_lm, ExternalLogprobs, IfdRecord, LogprobRecord, NgramConfig,
    PerplexityProvider,
};
use codesift::pack::{
    compare_strategies, pack_items, plan_dynamic_pack, plan_pad_to_longest, plan_pad_to_max, PackItem, PackScope,
};
use codesift::pipeline::{run_pipeline, sha256_file, RunConfig};
use codesift::select::{select_combined, DEFAULT_SWEEP};
use codesift::synth::{lognormal_lengths, synthetic_corpus, SynthConfig};
use codesift::tokenize::{ByteTokenizer, TokenizedSample};
use common::{baseline_cells, bigram_oracle, check_plan, exhaustive_min_bins, items, rel_err, V};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Duration, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus(pairs: &[(&str, &str)]) -> Corpus {
    let samples = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| Sample { id: format!("t{i}"), instruction: a.to_string(), code: b.to_string() })
        .collect();
    Corpus::new(samples, "toy").unwrap()
}

const TOY: [(&str, &str); 5] = [
    ("Add two numbers.", "def add(a, b):\n    return a + b"),
    ("Reverse a string.", "s[::-1]"),
    ("Print hello.", "print('hello')"),
    ("Square each item of xs.", "[x * x for x in xs]"),
    ("Return the max.", "max(xs)"),
];

fn ifd_arithmetic() -> Outcome {
    let c = corpus(&TOY);
    let lm = train_builtin_lm(&c, NgramConfig { order: 2, add_k: 1.0 }).map_err(|e| e.to_string())?;
    let got = score_corpus(&c, &PerplexityProvider::Ngram(lm), None).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (r, (pc, pu, ifd)) in got.iter().zip(bigram_oracle(&TOY, 1.0)) {
        worst = worst.max(rel_err(r.ppl_cond, pc)).max(rel_err(r.ppl_uncond, pu)).max(rel_err(r.ifd, ifd));
    }
    ensure(worst < 1e-12, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("5 samples, max relative error {worst:.1e}"))
}

fn tokenized(code_len: usize) -> TokenizedSample {
    TokenizedSample {
        id: "x".into(),
        instruction_tokens: Vec::new(),
        code_tokens: Vec::new(),
        instruction_len: 1,
        code_len,
        total_len: code_len + 2,
    }
}

fn ifd_triviality() -> Outcome {
    let c = corpus(&TOY);
    let lm = train_builtin_lm(&c, NgramConfig { order: 1, add_k: 0.5 }).map_err(|e| e.to_string())?;
    let blind = score_corpus(&c, &PerplexityProvider::Ngram(lm), None).map_err(|e| e.to_string())?;
    ensure(blind.iter().all(|r| r.ifd == 1.0), || "order-1 model gave ifd != 1".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [1usize, 7, 300, 4000] {
        let v: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..15.0)).collect();
        let p = ExternalLogprobs::from_records(vec![LogprobRecord {
            id: "x".into(),
            cond_logprobs: v.clone(),
            uncond_logprobs: v,
        }])
        .map_err(|e| e.to_string())?;
        let r = ifd_score(&tokenized(n), &PerplexityProvider::External(p)).map_err(|e| e.to_string())?;
        ensure(r.ifd == 1.0, || format!("identical arrays of length {n} gave ifd {}", r.ifd))?;
    }

    let u = -(V.ln());
    let p = ExternalLogprobs::from_records(vec![LogprobRecord {
        id: "x".into(),
        cond_logprobs: vec![u; 500],
        uncond_logprobs: vec![u; 500],
    }])
    .map_err(|e| e.to_string())?;
    let r = ifd_score(&tokenized(500), &PerplexityProvider::External(p)).map_err(|e| e.to_string())?;
    let err = rel_err(r.ppl_cond, V).max(rel_err(r.ppl_uncond, V));
    ensure(err < 1e-12, || format!("uniform perplexity off by {err:.2e}"))?;
    Ok(format!("ifd = 1 exactly (order-1 and identical arrays); uniform ppl = 257 (rel err {err:.1e})"))
}

fn clustering() -> Outcome {
    let centers = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Uniform::new(-0.5, 0.5).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..300 {
        let c = i % 3;
        rows.push(centers[c].iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>());
        labels.push(c);
    }
    // spread = largest distance from a point to its generating center
    let spread = rows
        .iter()
        .zip(&labels)
        .map(|(r, &c)| r.iter().zip(centers[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    ensure(10.0 >= 10.0 * spread, || format!("fixture spread {spread} too wide"))?;
    let emb = EmbeddingSet::from_rows(3, (0..300).map(|i| format!("p{i}")).collect(), rows).unwrap();

    for seed in 0..20 {
        let cfg = KMeansConfig { k: 3, seed, ..Default::default() };
        let a = kmeans_fit(&emb, &cfg).map_err(|e| e.to_string())?;
        let purity = purity(&a, &labels);
        ensure(purity == 1.0, || format!("seed {seed}: purity {purity}"))?;
        let rising = a.inertia_trace.windows(2).find(|w| w[1] > w[0]);
        ensure(rising.is_none(), || format!("seed {seed}: inertia rose {rising:?}"))?;
        let b = kmeans_fit(&emb, &cfg).map_err(|e| e.to_string())?;
        ensure(a.assignment == b.assignment, || format!("seed {seed}: assignments differ on rerun"))?;
    }
    Ok(format!("300 points, separation/spread {:.1}, purity 100% for seeds 0..20", 10.0 / spread))
}

fn purity(c: &Clustering, labels: &[usize]) -> f64 {
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&a, &l) in c.assignment.iter().zip(labels) {
        *table.entry((a, l)).or_default() += 1;
    }
    let majority: usize =
        (0..c.k).map(|j| table.iter().filter(|((a, _), _)| *a == j).map(|(_, &n)| n).max().unwrap_or(0)).sum();
    majority as f64 / labels.len() as f64
}

fn selection() -> Outcome {
    let (n, k) = (10_000, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = (0..n).map(|i| Sample { id: format!("s{i}"), instruction: "i".into(), code: "c".into() }).collect();
    let corpus = Corpus::new(samples, "mem").unwrap();
    let assignment: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let ifd: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { rng.random_range(0.2..1.6) }).collect();
    let scores: Vec<IfdRecord> = ifd
        .iter()
        .enumerate()
        .map(|(i, &x)| IfdRecord {
            id: format!("s{i}"),
            ppl_cond: x,
            ppl_uncond: 1.0,
            ifd: x,
            n_tokens: 1,
            mean_nll_cond: x.ln(),
            mean_nll_uncond: 0.0,
        })
        .collect();
    let clustering = Clustering {
        k,
        seed: 0,
        centroids: vec![vec![0.0]; k],
        assignment: assignment.clone(),
        inertia: 0.0,
        iterations_run: 0,
        inertia_trace: Vec::new(),
    };
    let mut prev: HashSet<usize> = HashSet::new();
    for m in DEFAULT_SWEEP {
        let got = select_combined(&corpus, &clustering, &scores, m).map_err(|e| e.to_string())?;
        let set: HashSet<usize> = got.selected_indices().into_iter().collect();
        ensure(set == common::brute_force_select(&assignment, &ifd, k, m as usize), || {
            format!("m={m}: differs from oracle")
        })?;
        for c in got.per_cluster() {
            ensure(c.selected == (m as usize * c.size).div_ceil(100), || {
                format!("m={m}: cluster {} count {}", c.cluster, c.selected)
            })?;
        }
        ensure(prev.is_subset(&set), || format!("m={m}: not nested"))?;
        prev = set;
    }
    Ok(format!("n={n}, k={k}, m in {DEFAULT_SWEEP:?}: oracle-exact, quotas exact, nested"))
}

fn random_lengths(rng: &mut ChaCha8Rng, n: usize, ctx: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=ctx)).collect()
}

fn pack_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut groups = 0usize;
    let mut guarded = 0usize;
    for inst in 0..1000 {
        let ctx = [64, 512, 4096][rng.random_range(0..3)];
        let bs = [8, 256][rng.random_range(0..2)];
        let n = rng.random_range(1..=1500);
        let lens = random_lengths(&mut rng, n, ctx);
        let it = items(&lens);
        let dynamic = plan_dynamic_pack(&it, ctx, bs, PackScope::Batch).map_err(|e| e.to_string())?;
        check_plan(&it, &dynamic).map_err(|e| format!("instance {inst}: {e}"))?;
        check_plan(&it, &plan_pad_to_longest(&it, ctx, bs).unwrap()).map_err(|e| format!("instance {inst}: {e}"))?;
        check_plan(&it, &plan_pad_to_max(&it, ctx, bs).unwrap()).map_err(|e| format!("instance {inst}: {e}"))?;
        for (g, (batch, &w)) in lens.chunks(bs).zip(dynamic.batches.iter().zip(&dynamic.padded_widths)) {
            groups += 1;
            let cells = (batch.len() * w) as u64;
            let (longest, max) = baseline_cells(g, ctx);
            ensure(cells <= longest && longest <= max, || {
                format!("instance {inst}: group cells {cells} > {longest} or {longest} > {max}")
            })?;
        }
        guarded += dynamic.stats.width_guarded_batches;
    }
    Ok(format!(
        "1000 instances, {groups} groups: conservation, capacity, dominance hold ({guarded} groups width-guarded)"
    ))
}

fn pack_quality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut guarded = 0;
    let mut above_opt = 0;
    for inst in 0..1000 {
        let ctx = [64, 512, 4096][rng.random_range(0..3)];
        let n = rng.random_range(1..=12);
        let lens = random_lengths(&mut rng, n, ctx);
        let opt = exhaustive_min_bins(&lens, ctx);
        let plan = plan_dynamic_pack(&items(&lens), ctx, n, PackScope::Batch).map_err(|e| e.to_string())?;
        let bins = plan.stats.bins_count;
        guarded += plan.stats.width_guarded_batches;
        above_opt += usize::from(bins > opt);
        ensure(9 * bins <= 11 * opt + 9, || format!("instance {inst}: {bins} bins, optimum {opt}, lengths {lens:?}"))?;
        worst = worst.max(bins as f64 / opt as f64);
    }
    Ok(format!("1000 instances: within (11/9)OPT+1; {above_opt} above optimum, worst ratio {worst:.3}, {guarded} width-guarded"))
}

fn micro_example() -> Outcome {
    let it: Vec<PackItem> = items(&[9, 5, 4, 3]);
    let cmp = compare_strategies(&it, 10, 4, PackScope::Batch).map_err(|e| e.to_string())?;
    for (name, pad, cells) in [("dynamic-pack", 6u64, 27u64), ("pad-to-longest", 15, 36), ("pad-to-max", 19, 40)] {
        let row = cmp.rows.iter().find(|r| r.strategy == name).ok_or(format!("{name} missing"))?;
        ensure(row.stats.total_padding_tokens == pad && row.stats.total_cells == cells, || {
            format!("{name}: {}/{}", row.stats.total_padding_tokens, row.stats.total_cells)
        })?;
        ensure(row.stats.padding_rate == pad as f64 / cells as f64, || {
            format!("{name}: rate {}", row.stats.padding_rate)
        })?;
    }
    Ok("rates exactly 6/27, 15/36, 19/40".into())
}

fn throughput(dir: &Path) -> Outcome {
    let input = dir.join("corpus75k.jsonl");
    let corpus = synthetic_corpus(&SynthConfig { n: 75_000, seed: 8, ..Default::default() });
    corpus.write_jsonl(&input).map_err(|e| e.to_string())?;
    let mean_total = pack_items(&corpus, &ByteTokenizer::default())
        .map_err(|e| e.to_string())?
        .iter()
        .map(|it| it.len)
        .sum::<usize>() as f64
        / corpus.len() as f64;
    drop(corpus);
    ensure((800.0..1000.0).contains(&mean_total), || format!("mean total length {mean_total:.0}"))?;

    let cfg = RunConfig { input, out_dir: dir.join("run75k"), ..Default::default() };
    let start = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let total = start.elapsed();
    let pack = report.timing("pack").unwrap_or_default();
    ensure(total < Duration::from_secs(120), || format!("pipeline took {total:.1?}"))?;
    ensure(pack < Duration::from_secs(5), || format!("pack stage took {pack:.2?}"))?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(format!(
        "75,000 samples (mean {mean_total:.0} tokens): pipeline {total:.1?}, pack {pack:.2?} on {cores} core(s)"
    ))
}

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_file(&p).unwrap()))
        .collect()
}

fn reproducibility(dir: &Path) -> Outcome {
    let input = dir.join("repro.jsonl");
    synthetic_corpus(&SynthConfig { n: 4_000, seed: 9, ..Default::default() })
        .write_jsonl(&input)
        .map_err(|e| e.to_string())?;
    let cfg = RunConfig { input, out_dir: dir.join("repro"), emit_subset: true, ..Default::default() };
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let first = hashes(&cfg.out_dir);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    pool.install(|| run_pipeline(&cfg)).map_err(|e| e.to_string())?;
    let second = hashes(&cfg.out_dir);
    ensure(first == second, || "artifact hashes differ between runs".into())?;
    Ok(format!("{} artifacts byte-identical across two runs (different worker counts)", first.len()))
}

/// Corpus whose code lengths follow a clipped log-normal profile.
fn profile_corpus(n: usize, mean: f64, sigma: f64, seed: u64) -> Corpus {
    let lens = lognormal_lengths(n, mean, sigma, 16, 16_000, seed);
    let samples = lens
        .into_iter()
        .enumerate()
        .map(|(i, l)| Sample { id: format!("p{i}"), instruction: "Solve the task.".into(), code: "x".repeat(l) })
        .collect();
    Corpus::new(samples, format!("profile(mean={mean}, sigma={sigma})")).unwrap()
}

fn padding_direction() -> Outcome {
    let mut profiles: Vec<(String, Corpus)> = vec![
        ("moderate-tail profile".into(), profile_corpus(20_000, 1_400.0, 0.6, 10)),
        ("heavy-tail profile".into(), profile_corpus(20_000, 1_700.0, 0.9, 11)),
    ];
    let real = std::env::var("CODESIFT_REAL_CORPORA").unwrap_or_default();
    for path in real.split(',').filter(|p| !p.is_empty()) {
        let report = load_corpus_lenient(Path::new(path), &FieldMapping::default()).map_err(|e| e.to_string())?;
        profiles.push((path.to_string(), report.corpus));
    }
    let mut parts = Vec::new();
    for (name, corpus) in &profiles {
        let it = pack_items(corpus, &ByteTokenizer::default()).map_err(|e| e.to_string())?;
        let ctx = it.iter().map(|i| i.len).max().unwrap_or(1).max(4096);
        let cmp = compare_strategies(&it, ctx, 256, PackScope::Batch).map_err(|e| e.to_string())?;
        let names: Vec<&str> = cmp.rows.iter().map(|r| r.strategy.as_str()).collect();
        ensure(names == ["dynamic-pack", "pad-to-longest", "pad-to-max", "fixed-pack-512"], || {
            format!("{name}: rows {names:?}")
        })?;
        let (d, l) = (cmp.rate("dynamic-pack").unwrap(), cmp.rate("pad-to-longest").unwrap());
        ensure(d < l, || format!("{name}: dynamic {d:.4} not below pad-to-longest {l:.4}"))?;
        parts.push(format!("{name} {:.2}% -> {:.2}%", 100.0 * l, 100.0 * d));
    }
    let source = if real.is_empty() {
        "synthetic length profiles only (real corpora not available offline)"
    } else {
        "including supplied real corpora"
    };
    Ok(format!("{}; {source}; published absolute rates are not reproducible here", parts.join(", ")))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("IFD arithmetic vs bigram table oracle", Duration::from_secs(1), Box::new(ifd_arithmetic)),
        ("IFD triviality (blind provider, uniform probabilities)", Duration::from_secs(1), Box::new(ifd_triviality)),
        ("k-means purity, monotone inertia, seed determinism", Duration::from_secs(5), Box::new(clustering)),
        ("combined selection vs brute-force oracle, quotas, nesting", Duration::from_secs(5), Box::new(selection)),
        ("dynamic pack conservation, capacity, dominance", Duration::from_secs(10), Box::new(pack_correctness)),
        ("dynamic pack within (11/9)OPT+1 of exhaustive optimum", Duration::from_secs(30), Box::new(pack_quality)),
        ("worked micro-example padding rates", Duration::from_secs(1), Box::new(micro_example)),
        (
            "75K-sample pipeline under 120 s, pack under 5 s",
            Duration::from_secs(600),
            Box::new(|| throughput(dir.path())),
        ),
        ("byte-identical reruns", Duration::from_secs(120), Box::new(|| reproducibility(dir.path()))),
        ("padding-rate direction and report structure", Duration::from_secs(60), Box::new(padding_direction)),
    ];

    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *limit => Err(format!("{detail}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail} [{took:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {why} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
