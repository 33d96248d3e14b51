//! Subset selection.
//!
//! The combined strategy ranks each cluster by IFD (descending, corpus order
//! breaking ties) and keeps the top ⌈m·n_c/100⌉ of every cluster. Three
//! baselines are provided for ablation: uniform random, global IFD top-m, and
//! cluster-stratified random.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ifd::IfdRecord;
use crate::jsonl;

/// Sampling-rate grid used by sweeps unless another is given.
pub const DEFAULT_SWEEP: [f64; 6] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Combined,
    Random,
    IfdGlobal,
    KmeansRandom,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Combined, Strategy::Random, Strategy::IfdGlobal, Strategy::KmeansRandom];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Combined => "combined",
            Strategy::Random => "random",
            Strategy::IfdGlobal => "ifd-global",
            Strategy::KmeansRandom => "kmeans-random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// ⌈(m/100)·n⌉, clamped to `n`.
pub fn quota(m_percent: f64, n: usize) -> usize {
    let q = (m_percent * n as f64 / 100.0).ceil() as usize;
    q.min(n)
}

fn check_rate(m_percent: f64) -> Result<()> {
    if m_percent > 0.0 && m_percent <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("m_percent must be in (0, 100], got {m_percent}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub cluster: Option<usize>,
    pub ifd: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCount {
    pub cluster: usize,
    pub size: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionManifest {
    pub strategy: Strategy,
    pub m_percent: f64,
    pub seed: Option<u64>,
    /// One entry per corpus sample, in corpus order.
    pub entries: Vec<ManifestEntry>,
    pub selected_count: usize,
}

/// Companion document to the manifest lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub strategy: Strategy,
    pub m_percent: f64,
    pub seed: Option<u64>,
    pub n: usize,
    pub selected_count: usize,
    pub per_cluster: Vec<ClusterCount>,
    /// Selected samples whose IFD exceeds 1 (kept; flagged for review).
    pub selected_ifd_above_one: usize,
    pub deduplication: String,
}

impl SelectionManifest {
    fn build(
        strategy: Strategy,
        m_percent: f64,
        seed: Option<u64>,
        corpus: &Corpus,
        clusters: Option<&[usize]>,
        ifd: Option<&[f64]>,
        selected: Vec<bool>,
    ) -> Self {
        let entries: Vec<ManifestEntry> = corpus
            .ids()
            .enumerate()
            .map(|(i, id)| ManifestEntry {
                id: id.to_string(),
                cluster: clusters.map(|c| c[i]),
                ifd: ifd.map(|s| s[i]),
                selected: selected[i],
            })
            .collect();
        let selected_count = selected.iter().filter(|&&s| s).count();
        Self { strategy, m_percent, seed, entries, selected_count }
    }

    /// Corpus indices of the selected samples, ascending.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.entries.iter().enumerate().filter(|(_, e)| e.selected).map(|(i, _)| i).collect()
    }

    pub fn selected_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|e| e.selected).map(|e| e.id.as_str())
    }

    pub fn per_cluster(&self) -> Vec<ClusterCount> {
        let mut counts: Vec<ClusterCount> = Vec::new();
        for e in &self.entries {
            let Some(c) = e.cluster else { continue };
            if counts.len() <= c {
                counts.extend((counts.len()..=c).map(|cluster| ClusterCount { cluster, size: 0, selected: 0 }));
            }
            counts[c].size += 1;
            counts[c].selected += e.selected as usize;
        }
        counts
    }

    pub fn summary(&self) -> SelectionSummary {
        SelectionSummary {
            strategy: self.strategy,
            m_percent: self.m_percent,
            seed: self.seed,
            n: self.entries.len(),
            selected_count: self.selected_count,
            per_cluster: self.per_cluster(),
            selected_ifd_above_one: self
                .entries
                .iter()
                .filter(|e| e.selected && e.ifd.is_some_and(|x| x > 1.0))
                .count(),
            deduplication: "not performed".into(),
        }
    }

    /// Writes the manifest lines and, next to them, the summary JSON.
    pub fn write(&self, manifest_path: &Path, summary_path: &Path) -> Result<()> {
        jsonl::write_records(manifest_path, &self.entries)?;
        jsonl::write_json(summary_path, &self.summary())
    }

    pub fn read(manifest_path: &Path, summary_path: &Path) -> Result<Self> {
        let entries: Vec<ManifestEntry> = jsonl::read_records(manifest_path)?.into_iter().map(|(_, e)| e).collect();
        let summary: SelectionSummary = jsonl::read_json(summary_path)?;
        let selected_count = entries.iter().filter(|e| e.selected).count();
        Ok(Self {
            strategy: summary.strategy,
            m_percent: summary.m_percent,
            seed: summary.seed,
            entries,
            selected_count,
        })
    }
}

/// IFD values aligned to corpus order.
fn aligned_scores(corpus: &Corpus, scores: &[IfdRecord]) -> Result<Vec<f64>> {
    let by_id: HashMap<&str, f64> = scores.iter().map(|r| (r.id.as_str(), r.ifd)).collect();
    corpus.ids().map(|id| by_id.get(id).copied().ok_or_else(|| Error::ScoreMissing(id.to_string()))).collect()
}

fn check_clustering(corpus: &Corpus, clustering: &Clustering) -> Result<()> {
    if clustering.assignment.len() != corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "clustering covers {} samples, corpus has {}",
            clustering.assignment.len(),
            corpus.len()
        )));
    }
    Ok(())
}

/// Marks the top `q` of `members` by IFD descending, ties to lower index.
fn take_top(members: &mut [usize], ifd: &[f64], q: usize, selected: &mut [bool]) {
    members.sort_by(|&a, &b| ifd[b].total_cmp(&ifd[a]).then(a.cmp(&b)));
    for &i in &members[..q] {
        selected[i] = true;
    }
}

pub fn select_combined(
    corpus: &Corpus,
    clustering: &Clustering,
    scores: &[IfdRecord],
    m_percent: f64,
) -> Result<SelectionManifest> {
    check_rate(m_percent)?;
    check_clustering(corpus, clustering)?;
    let ifd = aligned_scores(corpus, scores)?;
    let mut selected = vec![false; corpus.len()];
    for mut members in clustering.members() {
        let q = quota(m_percent, members.len());
        take_top(&mut members, &ifd, q, &mut selected);
    }
    Ok(SelectionManifest::build(
        Strategy::Combined,
        m_percent,
        None,
        corpus,
        Some(&clustering.assignment),
        Some(&ifd),
        selected,
    ))
}

pub fn select_random(corpus: &Corpus, m_percent: f64, seed: u64) -> Result<SelectionManifest> {
    check_rate(m_percent)?;
    let n = corpus.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, quota(m_percent, n)) {
        selected[i] = true;
    }
    Ok(SelectionManifest::build(Strategy::Random, m_percent, Some(seed), corpus, None, None, selected))
}

pub fn select_ifd_global(corpus: &Corpus, scores: &[IfdRecord], m_percent: f64) -> Result<SelectionManifest> {
    check_rate(m_percent)?;
    let ifd = aligned_scores(corpus, scores)?;
    let mut selected = vec![false; corpus.len()];
    let mut all: Vec<usize> = (0..corpus.len()).collect();
    take_top(&mut all, &ifd, quota(m_percent, corpus.len()), &mut selected);
    Ok(SelectionManifest::build(Strategy::IfdGlobal, m_percent, None, corpus, None, Some(&ifd), selected))
}

pub fn select_kmeans_random(
    corpus: &Corpus,
    clustering: &Clustering,
    m_percent: f64,
    seed: u64,
) -> Result<SelectionManifest> {
    check_rate(m_percent)?;
    check_clustering(corpus, clustering)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = vec![false; corpus.len()];
    for members in clustering.members() {
        let q = quota(m_percent, members.len());
        for j in rand::seq::index::sample(&mut rng, members.len(), q) {
            selected[members[j]] = true;
        }
    }
    Ok(SelectionManifest::build(
        Strategy::KmeansRandom,
        m_percent,
        Some(seed),
        corpus,
        Some(&clustering.assignment),
        None,
        selected,
    ))
}

/// Dispatches on `strategy`; inputs a strategy does not need may be `None`.
pub fn select(
    strategy: Strategy,
    corpus: &Corpus,
    clustering: Option<&Clustering>,
    scores: Option<&[IfdRecord]>,
    m_percent: f64,
    seed: u64,
) -> Result<SelectionManifest> {
    let need_clusters = || clustering.ok_or_else(|| Error::InvalidArgument(format!("{strategy} needs a clustering")));
    let need_scores = || scores.ok_or_else(|| Error::InvalidArgument(format!("{strategy} needs IFD scores")));
    match strategy {
        Strategy::Combined => select_combined(corpus, need_clusters()?, need_scores()?, m_percent),
        Strategy::Random => select_random(corpus, m_percent, seed),
        Strategy::IfdGlobal => select_ifd_global(corpus, need_scores()?, m_percent),
        Strategy::KmeansRandom => select_kmeans_random(corpus, need_clusters()?, m_percent, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;
    use proptest::prelude::*;
    use rand::Rng;

    fn corpus(n: usize) -> Corpus {
        let samples =
            (0..n).map(|i| Sample { id: format!("s{i}"), instruction: "instr".into(), code: "c".into() }).collect();
        Corpus::new(samples, "mem").unwrap()
    }

    fn records(scores: &[f64]) -> Vec<IfdRecord> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &ifd)| IfdRecord {
                id: format!("s{i}"),
                ppl_cond: 1.0,
                ppl_uncond: 1.0,
                ifd,
                n_tokens: 1,
                mean_nll_cond: 0.0,
                mean_nll_uncond: 0.0,
            })
            .collect()
    }

    fn clustering(assignment: Vec<usize>, k: usize) -> Clustering {
        Clustering {
            k,
            seed: 0,
            centroids: vec![vec![0.0]; k],
            assignment,
            inertia: 0.0,
            iterations_run: 0,
            inertia_trace: vec![],
        }
    }

    #[test]
    fn quota_is_exact_for_integer_rates() {
        assert_eq!(quota(30.0, 10), 3);
        assert_eq!(quota(10.0, 1), 1);
        assert_eq!(quota(40.0, 75_000), 30_000);
        for n in 0..2000usize {
            for m in 1..=100usize {
                assert_eq!(quota(m as f64, n), (m * n).div_ceil(100), "m={m} n={n}");
            }
        }
    }

    #[test]
    fn single_cluster_top_three() {
        let c = corpus(10);
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let m = select_combined(&c, &clustering(vec![0; 10], 1), &records(&scores), 30.0).unwrap();
        assert_eq!(m.selected_ids().collect::<Vec<_>>(), ["s7", "s8", "s9"]);
        assert_eq!(m.selected_count, 3);
    }

    #[test]
    fn full_rate_selects_everything() {
        let c = corpus(7);
        let cl = clustering(vec![0, 1, 0, 1, 2, 2, 0], 3);
        let r = records(&[0.5; 7]);
        for s in super::Strategy::ALL {
            let m = select(s, &c, Some(&cl), Some(&r), 100.0, 3).unwrap();
            assert_eq!(m.selected_count, 7, "{s}");
        }
    }

    #[test]
    fn ties_follow_corpus_order() {
        let c = corpus(10);
        let m = select_ifd_global(&c, &records(&[1.0; 10]), 25.0).unwrap();
        assert_eq!(m.selected_ids().collect::<Vec<_>>(), ["s0", "s1", "s2"]);
    }

    #[test]
    fn missing_score() {
        let c = corpus(3);
        let r = records(&[0.1, 0.2]);
        assert!(matches!(select_ifd_global(&c, &r, 50.0), Err(Error::ScoreMissing(id)) if id == "s2"));
        assert!(select_random(&c, 0.0, 1).is_err());
        assert!(select_random(&c, 100.5, 1).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let c = corpus(100);
        let a = select_random(&c, 37.0, 9).unwrap();
        assert_eq!(a, select_random(&c, 37.0, 9).unwrap());
        assert_eq!(a.selected_count, 37);
        assert_ne!(a.selected_indices(), select_random(&c, 37.0, 10).unwrap().selected_indices());
    }

    #[test]
    fn random_selection_frequency_is_binomial() {
        let n = 50;
        let m = 20.0;
        let c = corpus(n);
        let trials = 10_000;
        let mut hits = vec![0usize; n];
        for seed in 0..trials {
            for i in select_random(&c, m, seed).unwrap().selected_indices() {
                hits[i] += 1;
            }
        }
        let p = quota(m, n) as f64 / n as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (i, &h) in hits.iter().enumerate() {
            assert!((h as f64 - trials as f64 * p).abs() <= 3.5 * sigma, "id {i}: {h}");
        }
        // a fixed id, as stated: within 3 sigma
        assert!((hits[0] as f64 - trials as f64 * p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn kmeans_random_single_cluster_matches_random() {
        let c = corpus(40);
        let a = select_kmeans_random(&c, &clustering(vec![0; 40], 1), 30.0, 5).unwrap();
        let b = select_random(&c, 30.0, 5).unwrap();
        assert_eq!(a.selected_indices(), b.selected_indices());
    }

    #[test]
    fn kmeans_random_per_cluster_quota() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 500;
        let k = 7;
        let assignment: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let cl = clustering(assignment.clone(), k);
        let m = select_kmeans_random(&corpus(n), &cl, 35.0, 2).unwrap();
        for cc in m.per_cluster() {
            let size = assignment.iter().filter(|&&a| a == cc.cluster).count();
            assert_eq!(cc.size, size);
            assert_eq!(cc.selected, (35 * size).div_ceil(100));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let c = corpus(6);
        let m = select_combined(
            &c,
            &clustering(vec![0, 0, 1, 1, 1, 0], 2),
            &records(&[3.0, 1.0, 2.0, 0.5, 1.5, 2.5]),
            50.0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (mp, sp) = (dir.path().join("m.jsonl"), dir.path().join("s.json"));
        m.write(&mp, &sp).unwrap();
        assert_eq!(SelectionManifest::read(&mp, &sp).unwrap(), m);
        assert_eq!(m.summary().selected_ifd_above_one, 4);
    }

    proptest! {
        #[test]
        fn monotone_transform_keeps_selection(
            scores in proptest::collection::vec(0.01f64..5.0, 1..80),
            m in 1u32..=100,
            k in 1usize..5,
        ) {
            let n = scores.len();
            let c = corpus(n);
            let cl = clustering((0..n).map(|i| i % k.min(n)).collect(), k.min(n));
            let transformed: Vec<f64> = scores.iter().map(|x| x.ln() * 3.0 + 1.0).collect();
            let m = m as f64;
            let a = select_combined(&c, &cl, &records(&scores), m).unwrap();
            let b = select_combined(&c, &cl, &records(&transformed), m).unwrap();
            prop_assert_eq!(a.selected_indices(), b.selected_indices());
            let a = select_ifd_global(&c, &records(&scores), m).unwrap();
            let b = select_ifd_global(&c, &records(&transformed), m).unwrap();
            prop_assert_eq!(a.selected_indices(), b.selected_indices());
        }

        #[test]
        fn combined_is_nested_in_rate(
            scores in proptest::collection::vec(0.0f64..2.0, 1..80),
            m1 in 1u32..100,
            dm in 1u32..50,
        ) {
            let n = scores.len();
            let c = corpus(n);
            let cl = clustering((0..n).map(|i| (i * 7) % 3.min(n)).collect(), 3.min(n));
            let m2 = (m1 + dm).min(100);
            let small = select_combined(&c, &cl, &records(&scores), m1 as f64).unwrap();
            let large = select_combined(&c, &cl, &records(&scores), m2 as f64).unwrap();
            for (a, b) in small.entries.iter().zip(&large.entries) {
                prop_assert!(!a.selected || b.selected);
            }
        }
    }
}
