//! K-Means over instruction embeddings.
//!
//! k-means++ seeding, then Lloyd iterations until the largest centroid shift
//! drops below `tol` or `max_iter` is reached. Assignment runs in parallel.
//! Centroid sums and inertia accumulate sequentially in corpus order, so the
//! result does not depend on the worker count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 10, seed: 0, max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per sample, aligned to corpus order.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each Lloyd update (assignment against the updated centroids).
    pub inertia_trace: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let c: Clustering = jsonl::read_json(path)?;
        if c.centroids.len() != c.k || c.assignment.iter().any(|&a| a >= c.k) {
            return Err(Error::InvalidArgument(format!("{}: inconsistent clustering document", path.display())));
        }
        Ok(c)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(x, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_with_dist(emb: &EmbeddingSet, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..emb.len()).into_par_iter().map(|i| nearest(emb.vector(i), centroids)).unzip()
}

/// Nearest-centroid assignment by squared Euclidean distance.
pub fn assign(emb: &EmbeddingSet, centroids: &[Vec<f64>]) -> Result<Vec<usize>> {
    if centroids.is_empty() {
        return Err(Error::InvalidArgument("no centroids".into()));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != emb.dim()) {
        return Err(Error::DimensionMismatch { expected: emb.dim(), got: c.len() });
    }
    Ok(assign_with_dist(emb, centroids).0)
}

fn inertia_of(emb: &EmbeddingSet, centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    let d: Vec<f64> = assignment.par_iter().enumerate().map(|(i, &c)| sq_dist(emb.vector(i), &centroids[c])).collect();
    d.iter().sum()
}

fn kmeans_plus_plus(emb: &EmbeddingSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = emb.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![emb.vector(first).to_vec()];
    let mut d2: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(emb.vector(i), &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    last_positive = i;
                    acc += d;
                    if acc > target {
                        pick = Some(i);
                        break;
                    }
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            // all remaining points coincide with a centroid
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        let c = emb.vector(pick).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(emb.vector(i), &c);
            if nd < *d {
                *d = nd;
            }
        });
        centroids.push(c);
    }
    centroids
}

/// Gives every empty cluster the point farthest from its centroid, taken from a
/// cluster with more than one member. Returns whether anything moved.
fn repair_empty(emb: &EmbeddingSet, centroids: &mut [Vec<f64>], assignment: &mut [usize], dist: &mut [f64]) -> bool {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    let mut moved = false;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in assignment.iter().enumerate() {
            if sizes[a] > 1 && best.is_none_or(|(_, d)| dist[i] > d) {
                best = Some((i, dist[i]));
            }
        }
        let (p, _) = best.expect("k <= n guarantees a donor cluster");
        sizes[assignment[p]] -= 1;
        sizes[c] = 1;
        assignment[p] = c;
        dist[p] = 0.0;
        centroids[c] = emb.vector(p).to_vec();
        moved = true;
    }
    moved
}

fn update_centroids(emb: &EmbeddingSet, assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = emb.dim();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(emb.vector(i)) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let n = n as f64;
        s.iter_mut().for_each(|x| *x /= n);
    }
    sums
}

pub fn kmeans_fit(emb: &EmbeddingSet, cfg: &KMeansConfig) -> Result<Clustering> {
    let n = emb.len();
    let k = cfg.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if cfg.tol.is_nan() || cfg.tol < 0.0 {
        return Err(Error::InvalidArgument("tol must be non-negative".into()));
    }
    for (i, v) in emb.rows().enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding(emb.ids()[i].clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_plus_plus(emb, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let assignment = loop {
        let (mut assignment, mut dist) = assign_with_dist(emb, &centroids);
        let repaired = repair_empty(emb, &mut centroids, &mut assignment, &mut dist);
        if (converged && !repaired) || iterations >= cfg.max_iter {
            break assignment;
        }
        let updated = update_centroids(emb, &assignment, k);
        let shift = centroids.iter().zip(&updated).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0f64, f64::max);
        centroids = updated;
        trace.push(inertia_of(emb, &centroids, &assignment));
        iterations += 1;
        converged = shift < cfg.tol;
        log::debug!("kmeans iteration {iterations}: shift {shift:.3e}, inertia {:.6}", trace[trace.len() - 1]);
    };

    let inertia = inertia_of(emb, &centroids, &assignment);
    Ok(Clustering {
        k,
        seed: cfg.seed,
        centroids,
        assignment,
        inertia,
        iterations_run: iterations,
        inertia_trace: trace,
    })
}
