//! KMeans (k-means++ seeding, Lloyd iterations) over sentence vectors, plus
//! the sweep, silhouette and size-report utilities used to pick and inspect
//! automatically derived domains.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_json, seeded_rng, squared_distance, write_json, Rng};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: 100,
            tol: 1e-4,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub version: u32,
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub train_histogram: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    #[serde(default)]
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn assign(&self, vector: &[f64]) -> Result<usize> {
        if vector.len() != self.dim {
            return Err(Error::Argument(format!(
                "vector has dimension {}, model expects {}",
                vector.len(),
                self.dim
            )));
        }
        Ok(nearest(&self.centroids, vector).0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Index and squared distance of the closest centroid; ties go to the
/// smallest index.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_dims(vectors: &[Vec<f64>]) -> Result<usize> {
    let dim = vectors.first().map(Vec::len).unwrap_or(0);
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(Error::Argument(format!(
            "vector {i} has dimension {}, expected {dim}",
            v.len()
        )));
    }
    Ok(dim)
}

fn distinct_count(vectors: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = vectors
        .iter()
        .map(|v| v.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Greedy k-means++: each new centroid is the best of `2 + ln k` D²-weighted
/// candidates, judged by the resulting potential.
fn kmeans_plus_plus(vectors: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = vec![vectors[rng.random_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| squared_distance(v, &centroids[0])).collect();
    while centroids.len() < k {
        let candidates: Vec<usize> = match WeightedIndex::new(&d2) {
            Ok(w) => (0..trials).map(|_| w.sample(rng)).collect(),
            // Every point coincides with a centroid; cannot happen while
            // distinct points remain, kept for robustness.
            Err(_) => vec![d2.iter().position(|&d| d > 0.0).unwrap_or(0)],
        };
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for c in candidates {
            let updated: Vec<f64> = d2
                .iter()
                .zip(vectors)
                .map(|(d, v)| d.min(squared_distance(v, &vectors[c])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, c, updated));
            }
        }
        let (_, c, updated) = best.expect("at least one candidate");
        d2 = updated;
        centroids.push(vectors[c].clone());
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    trace: Vec<f64>,
    labels: Vec<usize>,
    inertia: f64,
}

fn assign_all(vectors: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for ((v, l), d) in vectors.iter().zip(labels.iter_mut()).zip(dists.iter_mut()) {
        let (i, dist) = nearest(centroids, v);
        *l = i;
        *d = dist;
        inertia += dist;
    }
    inertia
}

/// Single-point transfer refinement: moves a point to another cluster when
/// that lowers the total inertia once both means are updated. Lloyd fixed
/// points are often not transfer-stable, while transfer-stable partitions are
/// always Lloyd-stable. Leaves `centroids` at the exact means of `labels`.
fn hartigan(vectors: &[Vec<f64>], k: usize, labels: &mut [usize], centroids: &mut [Vec<f64>], trace: &mut Vec<f64>) {
    let dim = centroids.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for (v, &l) in vectors.iter().zip(labels.iter()) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(v) {
            *s += x;
        }
    }
    let mean = |sums: &[Vec<f64>], counts: &[usize], c: usize| -> Vec<f64> {
        sums[c].iter().map(|s| s / counts[c] as f64).collect()
    };
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = mean(&sums, &counts, c);
        }
    }
    let total = |labels: &[usize], centroids: &[Vec<f64>]| -> f64 {
        vectors.iter().zip(labels).map(|(v, &l)| squared_distance(v, &centroids[l])).sum()
    };
    // Gains below this relative size are rounding noise and could cycle.
    let eps = 1e-12 * total(labels, centroids).max(f64::MIN_POSITIVE);
    loop {
        let mut moved = false;
        for (i, v) in vectors.iter().enumerate() {
            let from = labels[i];
            if counts[from] <= 1 {
                continue;
            }
            let n_from = counts[from] as f64;
            let removal = n_from / (n_from - 1.0) * squared_distance(v, &centroids[from]);
            let mut best: Option<(usize, f64)> = None;
            for to in (0..k).filter(|&c| c != from && counts[c] > 0) {
                let n_to = counts[to] as f64;
                let delta = n_to / (n_to + 1.0) * squared_distance(v, &centroids[to]) - removal;
                if delta < -eps && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, _)) = best {
                for (c, sign) in [(from, -1.0), (to, 1.0)] {
                    for (s, x) in sums[c].iter_mut().zip(v) {
                        *s += sign * x;
                    }
                }
                counts[from] -= 1;
                counts[to] += 1;
                labels[i] = to;
                centroids[from] = mean(&sums, &counts, from);
                centroids[to] = mean(&sums, &counts, to);
                moved = true;
            }
        }
        if !moved {
            break;
        }
        trace.push(total(labels, centroids));
    }
}

fn lloyd(vectors: &[Vec<f64>], k: usize, dim: usize, params: &KMeansParams, rng: &mut Rng) -> Run {
    let n = vectors.len();
    let mut centroids = kmeans_plus_plus(vectors, k, rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();

    for _ in 0..params.max_iter {
        trace.push(assign_all(vectors, &centroids, &mut labels, &mut dists));

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &l) in vectors.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(v) {
                *s += x;
            }
        }
        // Re-seed empty clusters with the point farthest from its centroid,
        // taken from a cluster that can spare it.
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            let Some(far) = far else { break };
            let donor = labels[far];
            counts[donor] -= 1;
            for (s, x) in sums[donor].iter_mut().zip(&vectors[far]) {
                *s -= x;
            }
            counts[empty] = 1;
            sums[empty] = vectors[far].clone();
            labels[far] = empty;
            dists[far] = 0.0;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(squared_distance(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift <= params.tol {
            break;
        }
    }
    hartigan(vectors, k, &mut labels, &mut centroids, &mut trace);
    let inertia = assign_all(vectors, &centroids, &mut labels, &mut dists);
    trace.push(inertia);
    Run {
        centroids,
        trace,
        labels,
        inertia,
    }
}

pub fn fit_kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, params: &KMeansParams) -> Result<ClusterModel> {
    let dim = check_dims(vectors)?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let distinct = distinct_count(vectors);
    if k > distinct {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the number of distinct vectors ({distinct})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut best: Option<Run> = None;
    for _ in 0..params.restarts.max(1) {
        let run = lloyd(vectors, k, dim, params, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let mut histogram = vec![0; k];
    for &l in &best.labels {
        histogram[l] += 1;
    }
    Ok(ClusterModel {
        version: FORMAT_VERSION,
        k,
        dim,
        centroids: best.centroids,
        train_histogram: histogram,
        inertia: best.inertia,
        inertia_trace: best.trace,
    })
}

/// Mean silhouette coefficient with Euclidean distance. Singletons score 0,
/// and a single cluster scores 0 by convention.
pub fn silhouette(vectors: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for (i, v) in vectors.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, w) in vectors.iter().enumerate() {
            if i != j {
                sums[labels[j]] += squared_distance(v, w).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / vectors.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub model: ClusterModel,
    pub silhouette: f64,
}

/// Silhouette of a fitted model on at most `cap` vectors drawn with `seed`;
/// 0 for a single cluster.
pub fn sampled_silhouette(vectors: &[Vec<f64>], model: &ClusterModel, cap: usize, seed: u64) -> f64 {
    if model.k == 1 {
        return 0.0;
    }
    let sample: Vec<usize> = if vectors.len() > cap {
        let mut idx = index::sample(&mut seeded_rng(seed), vectors.len(), cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..vectors.len()).collect()
    };
    let subset: Vec<Vec<f64>> = sample.iter().map(|&i| vectors[i].clone()).collect();
    let labels: Vec<usize> = subset.iter().map(|v| nearest(&model.centroids, v).0).collect();
    silhouette(&subset, &labels)
}

/// Fits one model per `k`. The silhouette is computed on at most
/// `silhouette_cap` vectors drawn with the same seed.
pub fn sweep_k(
    vectors: &[Vec<f64>],
    ks: &[usize],
    seed: u64,
    params: &KMeansParams,
    silhouette_cap: usize,
) -> Result<Vec<SweepEntry>> {
    ks.iter()
        .map(|&k| {
            let model = fit_kmeans(vectors, k, seed, params)?;
            let silhouette = sampled_silhouette(vectors, &model, silhouette_cap, seed);
            Ok(SweepEntry { k, model, silhouette })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub source_name: String,
    /// Cluster sizes, largest first; empty clusters omitted.
    pub sizes: Vec<usize>,
}

pub fn cluster_report<L: Ord>(labels: &[L], name: &str) -> ClusterReport {
    let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut sizes: Vec<usize> = counts.into_values().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ClusterReport {
        source_name: name.to_owned(),
        sizes,
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization. Two
/// single-cluster labelings score 1.
pub fn nmi<A: Ord, B: Ord>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut ca: BTreeMap<&A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln()
        })
        .sum();
    (mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0)
}

/// Fraction of items whose cluster's majority class matches their class.
pub fn purity<A: Ord, B: Ord + Clone>(clusters: &[A], classes: &[B]) -> f64 {
    if clusters.is_empty() {
        return 1.0;
    }
    let mut table: BTreeMap<&A, BTreeMap<&B, usize>> = BTreeMap::new();
    for (c, l) in clusters.iter().zip(classes) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    hits as f64 / clusters.len() as f64
}

/// Maps each cluster to its most frequent class (ties to the smallest class).
pub fn majority_mapping<A: Ord + Clone, B: Ord + Clone>(clusters: &[A], classes: &[B]) -> BTreeMap<A, B> {
    let mut table: BTreeMap<&A, BTreeMap<&B, usize>> = BTreeMap::new();
    for (c, l) in clusters.iter().zip(classes) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    table
        .into_iter()
        .map(|(c, m)| {
            let best = m
                .iter()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
                .map(|(l, _)| (*l).clone())
                .expect("non-empty");
            (c.clone(), best)
        })
        .collect()
}
