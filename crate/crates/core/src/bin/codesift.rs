use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use codesift::cluster::{self, Clustering, KMeansConfig};
use codesift::corpus::{self, Corpus, CorpusStats, FieldMapping, LengthSummary};
use codesift::embed;
use codesift::error::{Error, Result};
use codesift::ifd::{self, NgramConfig};
use codesift::jsonl;
use codesift::pack::{self, PackScope, PackStrategy};
use codesift::pipeline::{self, RunConfig};
use codesift::select::{self, SelectionManifest, Strategy};
use codesift::tokenize::TokenCountProvider;

#[derive(Parser)]
#[command(name = "codesift", version, about = "Select instruction-tuning subsets and pack them with minimal padding")]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Corpus in JSON Lines.
    #[arg(long)]
    input: PathBuf,
    /// Field holding the sample id; records without it get `line-<k>`.
    #[arg(long, default_value = "id")]
    id_field: String,
    /// Instruction field (repeatable; first present wins).
    #[arg(long = "instruction-field", default_values_t = ["instruction".to_string()])]
    instruction_fields: Vec<String>,
    /// Response field (repeatable; first present wins).
    #[arg(long = "code-field", default_values_t = ["output".to_string(), "code".to_string()])]
    code_fields: Vec<String>,
    /// Drop malformed records instead of failing.
    #[arg(long)]
    skip_invalid: bool,
}

impl InputArgs {
    fn mapping(&self) -> FieldMapping {
        FieldMapping {
            id: Some(self.id_field.clone()),
            instruction: self.instruction_fields.clone(),
            code: self.code_fields.clone(),
        }
    }

    fn load(&self) -> Result<Corpus> {
        pipeline::load_input(&self.input, &self.mapping(), self.skip_invalid)
    }
}

#[derive(Args, Clone)]
struct CountArgs {
    /// Per-sample token counts from an external tokenizer.
    #[arg(long)]
    external_counts: Option<PathBuf>,
    /// Structural tokens added per sample.
    #[arg(long, default_value_t = codesift::tokenize::DEFAULT_OVERHEAD)]
    overhead: usize,
}

impl CountArgs {
    fn counter(&self) -> Result<TokenCountProvider> {
        pipeline::token_counter(self.overhead, self.external_counts.as_deref())
    }
}

#[derive(Args, Clone)]
struct PackArgs {
    #[arg(long, default_value_t = pack::DEFAULT_CONTEXT_LEN)]
    context_len: usize,
    #[arg(long, default_value_t = pack::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// `batch` packs within each batch; `epoch` packs everything then batches rows.
    #[arg(long, default_value = "batch")]
    scope: PackScope,
    /// Restrict to the samples selected in this manifest.
    #[arg(long)]
    selection: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write it in canonical form.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token-length statistics.
    Stats {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        counts: CountArgs,
        #[arg(long)]
        context_len: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed instructions (or normalize external embeddings).
    Embed {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = embed::DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-means over an embeddings file.
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// IFD scores for every sample.
    Score {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        counts: CountArgs,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.5)]
        add_k: f64,
        /// Per-token log-probabilities from an external model.
        #[arg(long)]
        external_logprobs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose a subset; writes a manifest and `<out>.summary.json`.
    Select {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "combined")]
        strategy: Strategy,
        #[arg(long, default_value_t = 40.0)]
        m: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        clustering: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the selected samples as a corpus.
        #[arg(long)]
        subset_out: Option<PathBuf>,
    },
    /// Plan batches for one packing strategy.
    Pack {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        counts: CountArgs,
        #[command(flatten)]
        pack: PackArgs,
        #[arg(long, default_value = "dynamic-pack")]
        strategy: PackStrategy,
        #[arg(long, default_value_t = pack::DEFAULT_TRUNCATE_LEN)]
        truncate_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Padding rates of every packing strategy.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        counts: CountArgs,
        #[command(flatten)]
        pack: PackArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Selection manifests over a grid of sampling rates.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated sampling rates in percent.
        #[arg(long, value_delimiter = ',', default_values_t = select::DEFAULT_SWEEP)]
        grid: Vec<f64>,
    },
}

/// Flags override the config file, which overrides defaults.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    skip_invalid: bool,
    #[arg(long)]
    external_counts: Option<PathBuf>,
    #[arg(long)]
    external_embeddings: Option<PathBuf>,
    #[arg(long)]
    external_logprobs: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Seeds k-means, the embedder and random selection.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    scope: Option<PackScope>,
    #[arg(long)]
    emit_subset: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            c.input = v.clone();
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        c.skip_invalid |= self.skip_invalid;
        c.emit_subset |= self.emit_subset;
        if self.external_counts.is_some() {
            c.external_counts = self.external_counts.clone();
        }
        if self.external_embeddings.is_some() {
            c.external_embeddings = self.external_embeddings.clone();
        }
        if self.external_logprobs.is_some() {
            c.external_logprobs = self.external_logprobs.clone();
        }
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if let Some(v) = self.m {
            c.m_percent = v;
        }
        if let Some(v) = self.k {
            c.kmeans.k = v;
        }
        if let Some(v) = self.seed {
            c.kmeans.seed = v;
            c.embed_seed = v;
            c.selection_seed = v;
        }
        if let Some(v) = self.context_len {
            c.context_len = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.scope {
            c.scope = v;
        }
        if c.input.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("no input corpus (use --input or a config file)".into()));
        }
        Ok(c)
    }
}

fn emit<T: Serialize>(format: Format, value: &T, table: impl FnOnce() -> String) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
        Format::Table => print!("{}", table()),
    }
    Ok(())
}

fn summary_row(name: &str, s: &LengthSummary) -> String {
    format!("{name:<12} {:>8} {:>8} {:>10.1} {:>8} {:>8} {:>8}\n", s.min, s.max, s.mean, s.p50, s.p90, s.p99)
}

fn stats_table(s: &CorpusStats) -> String {
    let mut out = format!("samples: {}\n", s.n);
    out.push_str(&format!(
        "{:<12} {:>8} {:>8} {:>10} {:>8} {:>8} {:>8}\n",
        "tokens", "min", "max", "mean", "p50", "p90", "p99"
    ));
    out.push_str(&summary_row("instruction", &s.instruction));
    out.push_str(&summary_row("code", &s.code));
    out.push_str(&summary_row("total", &s.total));
    if let Some(ctx) = s.context_len {
        out.push_str(&format!("exceeding context {ctx}: {}\n", s.exceeding_context));
    }
    out
}

fn restrict(corpus: Corpus, selection: Option<&Path>) -> Result<Corpus> {
    let Some(path) = selection else { return Ok(corpus) };
    let manifest = SelectionManifest::read(path, &summary_path(path))?;
    let aligned =
        manifest.entries.len() == corpus.len() && manifest.entries.iter().zip(corpus.ids()).all(|(e, id)| e.id == id);
    if !aligned {
        return Err(Error::InvalidArgument(format!(
            "selection {} does not list the corpus samples in order",
            path.display()
        )));
    }
    corpus.subset(&manifest.selected_indices())
}

fn summary_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("summary.json")
}

fn run(cli: Cli) -> Result<()> {
    let format = cli.format;
    match cli.command {
        Command::Ingest { input, out } => {
            let report = if input.skip_invalid {
                corpus::load_corpus_lenient(&input.input, &input.mapping())?
            } else {
                corpus::LoadReport { corpus: input.load()?, rejected: Vec::new() }
            };
            for e in &report.rejected {
                log::warn!("skipped: {e}");
            }
            report.corpus.write_jsonl(&out)?;
            println!("{} samples written, {} rejected", report.corpus.len(), report.rejected.len());
        }
        Command::Stats { input, counts, context_len, out } => {
            let stats = corpus::corpus_stats(&input.load()?, &counts.counter()?, context_len)?;
            if let Some(p) = out {
                jsonl::write_json(&p, &stats)?;
            }
            emit(format, &stats, || stats_table(&stats))?;
        }
        Command::Embed { input, dim, seed, external, out } => {
            let corpus = input.load()?;
            let emb = pipeline::embeddings(&corpus, dim, seed, external.as_deref())?;
            emb.write_jsonl(&out)?;
            println!("{} vectors of dimension {}", emb.len(), emb.dim());
        }
        Command::Cluster { embeddings, k, seed, max_iter, tol, out } => {
            let emb = embed::read_embeddings(&embeddings)?;
            let c = cluster::kmeans_fit(&emb, &KMeansConfig { k, seed, max_iter, tol })?;
            c.write_json(&out)?;
            println!(
                "k={} inertia={:.6} iterations={} sizes={:?}",
                c.k,
                c.inertia,
                c.iterations_run,
                c.cluster_sizes()
            );
        }
        Command::Score { input, counts, order, add_k, external_logprobs, out } => {
            let corpus = input.load()?;
            let counter = counts.counter()?;
            let scores =
                pipeline::ifd_scores(&corpus, &counter, NgramConfig { order, add_k }, external_logprobs.as_deref())?;
            ifd::write_ifd_records(&out, &scores)?;
            let above = scores.iter().filter(|r| r.ifd > 1.0).count();
            println!("{} scored, {} with IFD > 1", scores.len(), above);
        }
        Command::Select { input, strategy, m, seed, clustering, scores, out, subset_out } => {
            let corpus = input.load()?;
            let clustering = clustering.as_deref().map(Clustering::read_json).transpose()?;
            let scores = scores.as_deref().map(ifd::read_ifd_records).transpose()?;
            let manifest = select::select(strategy, &corpus, clustering.as_ref(), scores.as_deref(), m, seed)?;
            manifest.write(&out, &summary_path(&out))?;
            if let Some(p) = subset_out {
                corpus.subset(&manifest.selected_indices())?.write_jsonl(&p)?;
            }
            let summary = manifest.summary();
            emit(format, &summary, || {
                let mut t = format!("{} selected {} of {}\n", strategy, manifest.selected_count, corpus.len());
                for c in manifest.per_cluster() {
                    t.push_str(&format!("cluster {:>3}: {:>6} / {:>6}\n", c.cluster, c.selected, c.size));
                }
                t
            })?;
        }
        Command::Pack { input, counts, pack: p, strategy, truncate_len, out } => {
            let corpus = restrict(input.load()?, p.selection.as_deref())?;
            let items = pack::pack_items(&corpus, &counts.counter()?)?;
            let plan = pack::plan(strategy, &items, p.context_len, p.batch_size, p.scope, truncate_len)?;
            plan.write_json(&out)?;
            emit(format, &plan.stats, || {
                format!("{}: {} rows, padding rate {:.4}\n", strategy, plan.stats.bins_count, plan.stats.padding_rate)
            })?;
        }
        Command::Compare { input, counts, pack: p, out } => {
            let corpus = restrict(input.load()?, p.selection.as_deref())?;
            let items = pack::pack_items(&corpus, &counts.counter()?)?;
            let cmp = pack::compare_strategies(&items, p.context_len, p.batch_size, p.scope)?;
            if let Some(path) = out {
                jsonl::write_json(&path, &cmp)?;
            }
            emit(format, &cmp, || cmp.to_table())?;
        }
        Command::Pipeline { run } => {
            let cfg = run.config()?;
            let report = pipeline::run_pipeline(&cfg)?;
            emit(format, &report.comparison, || {
                format!(
                    "selected {} samples; artifacts in {}\n{}",
                    report.selected_count,
                    report.out_dir.display(),
                    report.comparison.to_table()
                )
            })?;
        }
        Command::Sweep { run, grid } => {
            let cfg = run.config()?;
            let summary = pipeline::run_sweep(&cfg, &grid)?;
            emit(format, &summary, || summary.to_table())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
            log::warn!("could not size worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
