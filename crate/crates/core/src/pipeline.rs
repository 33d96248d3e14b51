//! End-to-end runs: ingest → embed → cluster → score → select → pack → report.
//!
//! Every stage writes its artifact to the output directory; a final run
//! manifest records the configuration plus SHA-256 hashes of the inputs and of
//! every artifact. Nothing time- or host-dependent is written, so identical
//! configurations produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{kmeans_fit, Clustering, KMeansConfig};
use crate::corpus::{self, Corpus, FieldMapping};
use crate::embed::{self, EmbeddingSet};
use crate::error::{Error, Result};
use crate::ifd::{self, IfdRecord, NgramConfig, PerplexityProvider};
use crate::jsonl;
use crate::pack::{self, Comparison, PackPlan, PackScope};
use crate::select::{self, SelectionManifest, Strategy};
use crate::tokenize::{self, ByteTokenizer, TokenCountProvider, DEFAULT_OVERHEAD};

pub const CLUSTERING_FILE: &str = "clustering.json";
pub const IFD_FILE: &str = "ifd.jsonl";
pub const SELECTION_FILE: &str = "selection.jsonl";
pub const SELECTION_SUMMARY_FILE: &str = "selection_summary.json";
pub const SUBSET_FILE: &str = "subset.jsonl";
pub const PACK_PLAN_FILE: &str = "pack_plan.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const COMPARISON_TABLE_FILE: &str = "comparison.txt";
pub const STATS_FILE: &str = "corpus_stats.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub mapping: FieldMapping,
    pub skip_invalid: bool,
    /// Structural tokens added to every sample (end-of-sample separator).
    pub overhead: usize,
    pub external_counts: Option<PathBuf>,
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub external_embeddings: Option<PathBuf>,
    pub kmeans: KMeansConfig,
    pub lm: NgramConfig,
    pub external_logprobs: Option<PathBuf>,
    pub strategy: Strategy,
    pub m_percent: f64,
    pub selection_seed: u64,
    pub context_len: usize,
    pub batch_size: usize,
    pub scope: PackScope,
    pub emit_subset: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            mapping: FieldMapping::default(),
            skip_invalid: false,
            overhead: DEFAULT_OVERHEAD,
            external_counts: None,
            embed_dim: embed::DEFAULT_DIM,
            embed_seed: 0,
            external_embeddings: None,
            kmeans: KMeansConfig::default(),
            lm: NgramConfig::default(),
            external_logprobs: None,
            strategy: Strategy::Combined,
            m_percent: 40.0,
            selection_seed: 0,
            context_len: pack::DEFAULT_CONTEXT_LEN,
            batch_size: pack::DEFAULT_BATCH_SIZE,
            scope: PackScope::Batch,
            emit_subset: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        jsonl::read_json(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub artifacts: Vec<FileHash>,
}

#[derive(Debug, Clone)]
pub struct StageTiming {
    pub stage: &'static str,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub selected_count: usize,
    pub comparison: Comparison,
    pub timings: Vec<StageTiming>,
}

impl PipelineReport {
    pub fn timing(&self, stage: &str) -> Option<Duration> {
        self.timings.iter().find(|t| t.stage == stage).map(|t| t.elapsed)
    }
}

pub fn token_counter(overhead: usize, external: Option<&Path>) -> Result<TokenCountProvider> {
    Ok(match external {
        Some(p) => TokenCountProvider::External(tokenize::load_external_counts(p, overhead)?),
        None => TokenCountProvider::Builtin(ByteTokenizer::new(overhead)),
    })
}

pub fn load_input(input: &Path, mapping: &FieldMapping, skip_invalid: bool) -> Result<Corpus> {
    if skip_invalid {
        Ok(corpus::load_corpus_lenient(input, mapping)?.corpus)
    } else {
        corpus::load_corpus(input, mapping)
    }
}

pub fn embeddings(corpus: &Corpus, dim: usize, seed: u64, external: Option<&Path>) -> Result<EmbeddingSet> {
    match external {
        Some(p) => embed::load_external_embeddings(p, corpus),
        None => embed::embed_instructions(corpus, dim, seed),
    }
}

/// Scores the corpus with external log-probs when given, else the built-in n-gram model.
pub fn ifd_scores(
    corpus: &Corpus,
    counter: &TokenCountProvider,
    lm: NgramConfig,
    external: Option<&Path>,
) -> Result<Vec<IfdRecord>> {
    match external {
        Some(p) => {
            let provider = PerplexityProvider::External(ifd::load_external_logprobs(p, corpus, counter)?);
            ifd::score_corpus(corpus, &provider, Some(counter))
        }
        None => {
            let provider = PerplexityProvider::Ngram(ifd::train_builtin_lm(corpus, lm)?);
            ifd::score_corpus(corpus, &provider, None)
        }
    }
}

/// Packs the selected samples with dynamic pack and compares all strategies.
pub fn pack_selection(
    corpus: &Corpus,
    manifest: &SelectionManifest,
    counter: &TokenCountProvider,
    context_len: usize,
    batch_size: usize,
    scope: PackScope,
) -> Result<(PackPlan, Comparison)> {
    let subset = corpus.subset(&manifest.selected_indices())?;
    let items = pack::pack_items(&subset, counter)?;
    let plan = pack::plan_dynamic_pack(&items, context_len, batch_size, scope)?;
    let comparison = pack::compare_strategies(&items, context_len, batch_size, scope)?;
    Ok((plan, comparison))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {stage}: start");
        let out = f().map_err(|e| e.in_stage(stage))?;
        let elapsed = start.elapsed();
        log::info!("stage {stage}: done in {:.2?}", elapsed);
        self.timings.push(StageTiming { stage, elapsed });
        Ok(out)
    }
}

struct Prepared {
    corpus: Corpus,
    counter: TokenCountProvider,
    clustering: Clustering,
    scores: Vec<IfdRecord>,
}

fn prepare(cfg: &RunConfig, stages: &mut Stages) -> Result<Prepared> {
    let (corpus, counter) = stages.run("ingest", || {
        let counter = token_counter(cfg.overhead, cfg.external_counts.as_deref())?;
        let corpus = load_input(&cfg.input, &cfg.mapping, cfg.skip_invalid)?;
        let oversize = corpus::validate_for_context(&corpus, &counter, cfg.context_len)?;
        if !oversize.is_empty() {
            log::warn!(
                "{} samples exceed context length {} (first: {}); packing will refuse them if selected",
                oversize.len(),
                cfg.context_len,
                oversize[0]
            );
        }
        let stats = corpus::corpus_stats(&corpus, &counter, Some(cfg.context_len))?;
        jsonl::write_json(&cfg.out_dir.join(STATS_FILE), &stats)?;
        Ok((corpus, counter))
    })?;
    let emb = stages
        .run("embed", || embeddings(&corpus, cfg.embed_dim, cfg.embed_seed, cfg.external_embeddings.as_deref()))?;
    let clustering = stages.run("cluster", || {
        let c = kmeans_fit(&emb, &cfg.kmeans)?;
        c.write_json(&cfg.out_dir.join(CLUSTERING_FILE))?;
        Ok(c)
    })?;
    drop(emb);
    let scores = stages.run("score", || {
        let s = ifd_scores(&corpus, &counter, cfg.lm, cfg.external_logprobs.as_deref())?;
        ifd::write_ifd_records(&cfg.out_dir.join(IFD_FILE), &s)?;
        Ok(s)
    })?;
    Ok(Prepared { corpus, counter, clustering, scores })
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn hash_all(dir: &Path, files: &[&str]) -> Result<Vec<FileHash>> {
    files.iter().map(|f| Ok(FileHash { file: f.to_string(), sha256: sha256_file(&dir.join(f))? })).collect()
}

fn input_hashes(cfg: &RunConfig) -> Result<Vec<FileHash>> {
    let mut out = vec![FileHash { file: cfg.input.display().to_string(), sha256: sha256_file(&cfg.input)? }];
    for p in [&cfg.external_counts, &cfg.external_embeddings, &cfg.external_logprobs].into_iter().flatten() {
        out.push(FileHash { file: p.display().to_string(), sha256: sha256_file(p)? });
    }
    Ok(out)
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    create_out_dir(&cfg.out_dir)?;
    let mut stages = Stages { timings: Vec::new() };
    let prep = prepare(cfg, &mut stages)?;

    let manifest = stages.run("select", || {
        let m = select::select(
            cfg.strategy,
            &prep.corpus,
            Some(&prep.clustering),
            Some(&prep.scores),
            cfg.m_percent,
            cfg.selection_seed,
        )?;
        m.write(&cfg.out_dir.join(SELECTION_FILE), &cfg.out_dir.join(SELECTION_SUMMARY_FILE))?;
        if cfg.emit_subset {
            prep.corpus.subset(&m.selected_indices())?.write_jsonl(&cfg.out_dir.join(SUBSET_FILE))?;
        }
        Ok(m)
    })?;

    let comparison = stages.run("pack", || {
        let (plan, comparison) =
            pack_selection(&prep.corpus, &manifest, &prep.counter, cfg.context_len, cfg.batch_size, cfg.scope)?;
        plan.write_json(&cfg.out_dir.join(PACK_PLAN_FILE))?;
        jsonl::write_json(&cfg.out_dir.join(COMPARISON_FILE), &comparison)?;
        write_text(&cfg.out_dir.join(COMPARISON_TABLE_FILE), &comparison.to_table())?;
        Ok(comparison)
    })?;

    let mut files = vec![
        STATS_FILE,
        CLUSTERING_FILE,
        IFD_FILE,
        SELECTION_FILE,
        SELECTION_SUMMARY_FILE,
        PACK_PLAN_FILE,
        COMPARISON_FILE,
        COMPARISON_TABLE_FILE,
    ];
    if cfg.emit_subset {
        files.push(SUBSET_FILE);
    }
    stages.run("report", || {
        let run = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            inputs: input_hashes(cfg)?,
            artifacts: hash_all(&cfg.out_dir, &files)?,
        };
        jsonl::write_json(&cfg.out_dir.join(RUN_MANIFEST_FILE), &run)
    })?;
    files.push(RUN_MANIFEST_FILE);

    Ok(PipelineReport {
        out_dir: cfg.out_dir.clone(),
        artifacts: files.iter().map(|f| cfg.out_dir.join(f)).collect(),
        selected_count: manifest.selected_count,
        comparison,
        timings: stages.timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m_percent: f64,
    pub selected_count: usize,
    pub per_cluster_selected: Vec<usize>,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub strategy: Strategy,
    pub n: usize,
    pub cluster_sizes: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn to_table(&self) -> String {
        let mut out = format!("strategy={} n={}\n{:>8} {:>10}  per-cluster\n", self.strategy, self.n, "m%", "selected");
        for r in &self.rows {
            out.push_str(&format!("{:>8} {:>10}  {:?}\n", r.m_percent, r.selected_count, r.per_cluster_selected));
        }
        out
    }
}

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";

fn rate_label(m: f64) -> String {
    let s = format!("{m}");
    s.replace('.', "_")
}

/// One selection manifest per sampling rate, sharing a single clustering and scoring pass.
pub fn run_sweep(cfg: &RunConfig, grid: &[f64]) -> Result<SweepSummary> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    create_out_dir(&cfg.out_dir)?;
    let mut stages = Stages { timings: Vec::new() };
    let prep = prepare(cfg, &mut stages)?;
    let rows = stages.run("select", || {
        grid.iter()
            .map(|&m| {
                let manifest = select::select(
                    cfg.strategy,
                    &prep.corpus,
                    Some(&prep.clustering),
                    Some(&prep.scores),
                    m,
                    cfg.selection_seed,
                )?;
                let label = rate_label(m);
                let mfile = format!("selection_m{label}.jsonl");
                manifest
                    .write(&cfg.out_dir.join(&mfile), &cfg.out_dir.join(format!("selection_m{label}_summary.json")))?;
                Ok(SweepRow {
                    m_percent: m,
                    selected_count: manifest.selected_count,
                    per_cluster_selected: manifest.per_cluster().iter().map(|c| c.selected).collect(),
                    manifest: mfile,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = SweepSummary {
        strategy: cfg.strategy,
        n: prep.corpus.len(),
        cluster_sizes: prep.clustering.cluster_sizes(),
        rows,
    };
    jsonl::write_json(&cfg.out_dir.join(SWEEP_SUMMARY_FILE), &summary)?;
    Ok(summary)
}
