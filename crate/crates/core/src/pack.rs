//! Batch planning and padding accounting.
//!
//! Dynamic pack takes each batch of samples, sorts it by length (longest
//! first), and concatenates samples into rows with first-fit-decreasing so no
//! row exceeds the context length. It then pads every row of the batch to the
//! longest row. Samples are never truncated. The baselines are one-sample rows
//! padded to the batch maximum or to the context length, and a fixed pack that
//! truncates to 512 tokens and concatenates in stream order.
//!
//! Padding rate is padding tokens divided by total cells, where cells are
//! rows × padded width summed over batches.

use std::cmp::Reverse;
use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::tokenize::TokenCounter;

pub const DEFAULT_CONTEXT_LEN: usize = 4096;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_TRUNCATE_LEN: usize = 512;
/// Largest instance [`optimal_bins_oracle`] will search.
pub const ORACLE_MAX_ITEMS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub len: usize,
}

impl PackItem {
    pub fn new(id: impl Into<String>, len: usize) -> Self {
        Self { id: id.into(), len }
    }
}

/// Total token length of every sample, in corpus order.
pub fn pack_items(corpus: &Corpus, counter: &dyn TokenCounter) -> Result<Vec<PackItem>> {
    corpus.samples().iter().map(|s| Ok(PackItem::new(s.id.clone(), counter.counts(s)?.total_len))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackStrategy {
    DynamicPack,
    PadToLongest,
    PadToMax,
    FixedPack,
}

impl PackStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PackStrategy::DynamicPack => "dynamic-pack",
            PackStrategy::PadToLongest => "pad-to-longest",
            PackStrategy::PadToMax => "pad-to-max",
            PackStrategy::FixedPack => "fixed-pack",
        }
    }
}

impl fmt::Display for PackStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PackStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PackStrategy::DynamicPack, PackStrategy::PadToLongest, PackStrategy::PadToMax, PackStrategy::FixedPack]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pack strategy {s:?}")))
    }
}

/// Which samples dynamic pack may combine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackScope {
    /// Pack within each consecutive group of `batch_size` samples.
    #[default]
    Batch,
    /// Pack the whole input at once, then group rows into batches.
    Epoch,
}

impl std::str::FromStr for PackScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(PackScope::Batch),
            "epoch" => Ok(PackScope::Epoch),
            _ => Err(Error::InvalidArgument(format!("unknown pack scope {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

/// One row: contiguous segments starting at offset 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub segments: Vec<Segment>,
    pub used: usize,
    pub capacity: usize,
}

impl Bin {
    fn new(capacity: usize) -> Self {
        Self { segments: Vec::new(), used: 0, capacity }
    }

    fn push(&mut self, id: &str, len: usize) {
        debug_assert!(self.used + len <= self.capacity);
        self.segments.push(Segment { id: id.to_string(), start: self.used, len });
        self.used += len;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingStats {
    pub samples: usize,
    pub total_real_tokens: u64,
    pub total_padding_tokens: u64,
    pub total_cells: u64,
    pub padding_rate: f64,
    pub bins_count: usize,
    /// Rows saved relative to one row per sample.
    pub rows_saved: i64,
    /// Tokens dropped by truncation (fixed pack only).
    pub truncated_tokens: u64,
    /// Batches re-packed below full context to stay within pad-to-longest cost.
    #[serde(default)]
    pub width_guarded_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub id: String,
    pub original_len: usize,
    pub kept_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackPlan {
    pub strategy: PackStrategy,
    pub context_len: usize,
    pub batch_size: usize,
    pub scope: PackScope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_len: Option<usize>,
    pub batches: Vec<Vec<Bin>>,
    /// Width every row of the batch is padded to.
    pub padded_widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncations: Vec<Truncation>,
    pub stats: PaddingStats,
}

impl PackPlan {
    fn assemble(
        strategy: PackStrategy,
        context_len: usize,
        batch_size: usize,
        scope: PackScope,
        batches: Vec<Vec<Bin>>,
        padded_widths: Vec<usize>,
        samples: usize,
    ) -> Self {
        let mut real = 0u64;
        let mut cells = 0u64;
        let mut bins_count = 0;
        for (batch, &w) in batches.iter().zip(&padded_widths) {
            bins_count += batch.len();
            cells += (batch.len() * w) as u64;
            real += batch.iter().map(|b| b.used as u64).sum::<u64>();
        }
        let padding = cells - real;
        let stats = PaddingStats {
            samples,
            total_real_tokens: real,
            total_padding_tokens: padding,
            total_cells: cells,
            padding_rate: if cells == 0 { 0.0 } else { padding as f64 / cells as f64 },
            bins_count,
            rows_saved: samples as i64 - bins_count as i64,
            truncated_tokens: 0,
            width_guarded_batches: 0,
        };
        Self {
            strategy,
            context_len,
            batch_size,
            scope,
            truncate_len: None,
            batches,
            padded_widths,
            truncations: Vec::new(),
            stats,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        jsonl::read_json(path)
    }
}

fn check_args(context_len: usize, batch_size: usize) -> Result<()> {
    if context_len == 0 {
        return Err(Error::InvalidArgument("context_len must be >= 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    Ok(())
}

fn check_fits(items: &[PackItem], context_len: usize) -> Result<()> {
    match items.iter().find(|it| it.len > context_len) {
        Some(it) => Err(Error::SampleExceedsContext { id: it.id.clone(), len: it.len, context_len }),
        None => Ok(()),
    }
}

/// Leftmost-bin-with-room queries in O(log n) over a max tree of remaining capacity.
struct FirstFitTree {
    size: usize,
    tree: Vec<usize>,
    opened: usize,
}

impl FirstFitTree {
    fn new(max_bins: usize) -> Self {
        let size = max_bins.max(1).next_power_of_two();
        Self { size, tree: vec![0; 2 * size], opened: 0 }
    }

    fn set(&mut self, bin: usize, remaining: usize) {
        let mut i = bin + self.size;
        self.tree[i] = remaining;
        while i > 1 {
            i /= 2;
            self.tree[i] = self.tree[2 * i].max(self.tree[2 * i + 1]);
        }
    }

    fn open(&mut self, remaining: usize) -> usize {
        let bin = self.opened;
        self.opened += 1;
        self.set(bin, remaining);
        bin
    }

    fn first_fit(&self, len: usize) -> Option<usize> {
        if self.tree[1] < len {
            return None;
        }
        let mut i = 1;
        while i < self.size {
            i = if self.tree[2 * i] >= len { 2 * i } else { 2 * i + 1 };
        }
        let bin = i - self.size;
        (bin < self.opened).then_some(bin)
    }
}

/// First-fit-decreasing over `items`. Items are sorted longest first, ties in
/// input order. Returns bins of item indices in placement order.
pub fn first_fit_decreasing(lengths: &[usize], capacity: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| Reverse(lengths[i]));
    let mut tree = FirstFitTree::new(lengths.len());
    let mut remaining: Vec<usize> = Vec::new();
    let mut bins: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let len = lengths[i];
        match tree.first_fit(len) {
            Some(b) => {
                remaining[b] -= len;
                tree.set(b, remaining[b]);
                bins[b].push(i);
            }
            None => {
                tree.open(capacity - len);
                remaining.push(capacity - len);
                bins.push(vec![i]);
            }
        }
    }
    bins
}

fn ffd_bins(items: &[PackItem], capacity: usize) -> Vec<Bin> {
    let lengths: Vec<usize> = items.iter().map(|it| it.len).collect();
    first_fit_decreasing(&lengths, capacity)
        .into_iter()
        .map(|idx| {
            let mut bin = Bin::new(capacity);
            for i in idx {
                bin.push(&items[i].id, items[i].len);
            }
            bin
        })
        .collect()
}

fn max_used(bins: &[Bin]) -> usize {
    bins.iter().map(|b| b.used).max().unwrap_or(0)
}

/// Packs one batch, never using more cells than padding it to its longest sample.
///
/// Concatenation can widen a batch past its longest sample, so full-context
/// FFD occasionally loses to plain padding on small groups (e.g. `[5, 5, 5]`
/// in a context of 10). When that happens the group is re-packed at the
/// capacity in `[longest, context_len)` with the fewest cells, preferring
/// fewer rows and then the larger capacity. Capacity `longest` always
/// qualifies, so the result is bounded by the pad-to-longest cost.
fn pack_group(group: &[PackItem], context_len: usize) -> (Vec<Bin>, bool) {
    let bins = ffd_bins(group, context_len);
    let longest = group.iter().map(|it| it.len).max().unwrap_or(0);
    let limit = group.len() * longest;
    if bins.len() * max_used(&bins) <= limit {
        return (bins, false);
    }
    let lengths: Vec<usize> = group.iter().map(|it| it.len).collect();
    let mut best: Option<(usize, usize, usize)> = None;
    for cap in (longest..context_len).rev() {
        let rows = first_fit_decreasing(&lengths, cap);
        let width = rows.iter().map(|r| r.iter().map(|&i| lengths[i]).sum::<usize>()).max().unwrap_or(0);
        let key = (rows.len() * width, rows.len(), cap);
        if key.0 <= limit && best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    let cap = best.map_or(longest, |b| b.2);
    let mut bins = ffd_bins(group, cap);
    // rows keep the real context as their capacity
    bins.iter_mut().for_each(|b| b.capacity = context_len);
    (bins, true)
}

pub fn plan_dynamic_pack(
    items: &[PackItem],
    context_len: usize,
    batch_size: usize,
    scope: PackScope,
) -> Result<PackPlan> {
    check_args(context_len, batch_size)?;
    check_fits(items, context_len)?;
    let (batches, guarded): (Vec<Vec<Bin>>, usize) = match scope {
        PackScope::Batch => {
            let packed: Vec<(Vec<Bin>, bool)> =
                items.par_chunks(batch_size).map(|group| pack_group(group, context_len)).collect();
            let guarded = packed.iter().filter(|p| p.1).count();
            (packed.into_iter().map(|p| p.0).collect(), guarded)
        }
        PackScope::Epoch => {
            let rows = ffd_bins(items, context_len);
            (rows.chunks(batch_size).map(<[Bin]>::to_vec).collect(), 0)
        }
    };
    let widths = batches.iter().map(|b| max_used(b)).collect();
    let mut plan =
        PackPlan::assemble(PackStrategy::DynamicPack, context_len, batch_size, scope, batches, widths, items.len());
    plan.stats.width_guarded_batches = guarded;
    Ok(plan)
}

fn single_rows(items: &[PackItem], context_len: usize, batch_size: usize) -> Vec<Vec<Bin>> {
    items
        .chunks(batch_size)
        .map(|group| {
            group
                .iter()
                .map(|it| {
                    let mut b = Bin::new(context_len);
                    b.push(&it.id, it.len);
                    b
                })
                .collect()
        })
        .collect()
}

pub fn plan_pad_to_longest(items: &[PackItem], context_len: usize, batch_size: usize) -> Result<PackPlan> {
    check_args(context_len, batch_size)?;
    check_fits(items, context_len)?;
    let batches = single_rows(items, context_len, batch_size);
    let widths = batches.iter().map(|b| max_used(b)).collect();
    Ok(PackPlan::assemble(
        PackStrategy::PadToLongest,
        context_len,
        batch_size,
        PackScope::Batch,
        batches,
        widths,
        items.len(),
    ))
}

pub fn plan_pad_to_max(items: &[PackItem], context_len: usize, batch_size: usize) -> Result<PackPlan> {
    check_args(context_len, batch_size)?;
    check_fits(items, context_len)?;
    let batches = single_rows(items, context_len, batch_size);
    let widths = vec![context_len; batches.len()];
    Ok(PackPlan::assemble(
        PackStrategy::PadToMax,
        context_len,
        batch_size,
        PackScope::Batch,
        batches,
        widths,
        items.len(),
    ))
}

/// Truncates every sample to `truncate_len` (capped at `context_len`), then
/// concatenates in stream order, opening a new row whenever the next sample
/// does not fit. Rows are grouped into batches of `batch_size`, each padded to
/// its longest row.
pub fn plan_fixed_pack(
    items: &[PackItem],
    truncate_len: usize,
    context_len: usize,
    batch_size: usize,
) -> Result<PackPlan> {
    check_args(context_len, batch_size)?;
    if truncate_len == 0 {
        return Err(Error::InvalidArgument("truncate_len must be >= 1".into()));
    }
    let limit = truncate_len.min(context_len);
    let mut truncations = Vec::new();
    let mut truncated_tokens = 0u64;
    let mut bins: Vec<Bin> = Vec::new();
    let mut current = Bin::new(context_len);
    for it in items {
        let kept = it.len.min(limit);
        if kept < it.len {
            truncated_tokens += (it.len - kept) as u64;
            truncations.push(Truncation { id: it.id.clone(), original_len: it.len, kept_len: kept });
        }
        if current.used + kept > context_len {
            bins.push(std::mem::replace(&mut current, Bin::new(context_len)));
        }
        current.push(&it.id, kept);
    }
    if !current.segments.is_empty() {
        bins.push(current);
    }
    let batches: Vec<Vec<Bin>> = bins.chunks(batch_size).map(<[Bin]>::to_vec).collect();
    let widths = batches.iter().map(|b| max_used(b)).collect();
    let mut plan = PackPlan::assemble(
        PackStrategy::FixedPack,
        context_len,
        batch_size,
        PackScope::Epoch,
        batches,
        widths,
        items.len(),
    );
    plan.truncate_len = Some(truncate_len);
    plan.truncations = truncations;
    plan.stats.truncated_tokens = truncated_tokens;
    Ok(plan)
}

pub fn plan(
    strategy: PackStrategy,
    items: &[PackItem],
    context_len: usize,
    batch_size: usize,
    scope: PackScope,
    truncate_len: usize,
) -> Result<PackPlan> {
    match strategy {
        PackStrategy::DynamicPack => plan_dynamic_pack(items, context_len, batch_size, scope),
        PackStrategy::PadToLongest => plan_pad_to_longest(items, context_len, batch_size),
        PackStrategy::PadToMax => plan_pad_to_max(items, context_len, batch_size),
        PackStrategy::FixedPack => plan_fixed_pack(items, truncate_len, context_len, batch_size),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub stats: PaddingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub context_len: usize,
    pub batch_size: usize,
    pub scope: PackScope,
    pub truncate_len: usize,
    pub padding_rate_definition: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn rate(&self, strategy: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == strategy).map(|r| r.stats.padding_rate)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "context_len={} batch_size={} scope={:?}", self.context_len, self.batch_size, self.scope);
        let _ = writeln!(out, "{}", self.padding_rate_definition);
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>14} {:>14} {:>14} {:>10} {:>12}",
            "Strategy", "Padding Rate", "Real Tokens", "Padding", "Cells", "Rows", "Truncated"
        );
        for r in &self.rows {
            let s = &r.stats;
            let _ = writeln!(
                out,
                "{:<16} {:>11.2}% {:>14} {:>14} {:>14} {:>10} {:>12}",
                r.strategy,
                s.padding_rate * 100.0,
                s.total_real_tokens,
                s.total_padding_tokens,
                s.total_cells,
                s.bins_count,
                s.truncated_tokens
            );
        }
        out
    }
}

/// Runs all four planners on the same input.
pub fn compare_strategies(
    items: &[PackItem],
    context_len: usize,
    batch_size: usize,
    scope: PackScope,
) -> Result<Comparison> {
    let dynamic = plan_dynamic_pack(items, context_len, batch_size, scope)?;
    let longest = plan_pad_to_longest(items, context_len, batch_size)?;
    let max = plan_pad_to_max(items, context_len, batch_size)?;
    let fixed = plan_fixed_pack(items, DEFAULT_TRUNCATE_LEN, context_len, batch_size)?;
    let row = |name: String, p: PackPlan| ComparisonRow { strategy: name, stats: p.stats };
    Ok(Comparison {
        context_len,
        batch_size,
        scope,
        truncate_len: DEFAULT_TRUNCATE_LEN,
        padding_rate_definition: "padding rate = padding tokens / (rows x padded width), summed over batches".into(),
        rows: vec![
            row("dynamic-pack".into(), dynamic),
            row("pad-to-longest".into(), longest),
            row("pad-to-max".into(), max),
            row(format!("fixed-pack-{DEFAULT_TRUNCATE_LEN}"), fixed),
        ],
    })
}

/// Exact minimum number of bins of `capacity` holding all `lengths`.
pub fn optimal_bins_oracle(lengths: &[usize], capacity: usize) -> Result<usize> {
    if lengths.len() > ORACLE_MAX_ITEMS {
        return Err(Error::TooManyItems { max: ORACLE_MAX_ITEMS, got: lengths.len() });
    }
    if let Some(&len) = lengths.iter().find(|&&l| l > capacity) {
        return Err(Error::SampleExceedsContext { id: String::new(), len, context_len: capacity });
    }
    if lengths.is_empty() {
        return Ok(0);
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let total: usize = sorted.iter().sum();
    let lower = total.div_ceil(capacity).max(1);

    fn search(items: &[usize], loads: &mut Vec<usize>, cap: usize, best: &mut usize, lower: usize) {
        if *best == lower {
            return;
        }
        let Some((&item, rest)) = items.split_first() else {
            *best = (*best).min(loads.len());
            return;
        };
        for b in 0..loads.len() {
            // bins with equal load are interchangeable
            if loads[b] + item <= cap && !loads[..b].contains(&loads[b]) {
                loads[b] += item;
                search(rest, loads, cap, best, lower);
                loads[b] -= item;
            }
        }
        if loads.len() + 1 < *best {
            loads.push(item);
            search(rest, loads, cap, best, lower);
            loads.pop();
        }
    }

    let mut best = sorted.len();
    search(&sorted, &mut Vec::new(), capacity, &mut best, lower);
    Ok(best)
}
