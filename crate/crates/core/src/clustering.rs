//! K-means over embedding vectors, with the number of clusters chosen by
//! silhouette and capped at a small `k_max`.
//!
//! Cluster ids are `0..k`. Distances are Euclidean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Silhouettes at or below this value count as "no structure".
pub const MIN_SILHOUETTE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
    pub k_max: usize,
    /// Silhouette is computed on at most this many (seeded) sampled points.
    pub silhouette_sample: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            restarts: 10,
            k_max: 5,
            silhouette_sample: 2_000,
        }
    }
}

/// A fitted clustering function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
    /// Silhouette of the chosen partition, when one was computed.
    pub silhouette: Option<f64>,
}

/// One Lloyd run from one k-means++ seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        // Strict `<` keeps the lowest id on ties.
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::NotEnoughData("no points to cluster".into()))?;
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite coordinate in clustering input".into()));
        }
    }
    Ok(dim)
}

fn sample_d2<R: Rng>(d2: &[f64], rng: &mut R) -> usize {
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..d2.len());
    }
    let mut target = rng.random_range(0.0..total);
    for (i, &d) in d2.iter().enumerate() {
        if target < d {
            return i;
        }
        target -= d;
    }
    d2.len() - 1
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let c = points[sample_d2(&d2, rng)].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Single-point transfers (Hartigan's rule) from a Lloyd fixpoint: a point
/// moves when that lowers the inertia once both centroids are updated.
/// Returns the new centroids, or `None` when no move helps.
fn transfer_points(points: &[Vec<f64>], labels: &[usize], k: usize) -> Option<Vec<Vec<f64>>> {
    let dim = points[0].len();
    let mut labels = labels.to_vec();
    let mut counts = vec![0usize; k];
    let mut centroids = vec![vec![0.0; dim]; k];
    for (p, &l) in points.iter().zip(&labels) {
        counts[l] += 1;
        centroids[l].iter_mut().zip(p).for_each(|(c, v)| *c += v);
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let mut any = false;
    loop {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = labels[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let gain = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = nb / (nb + 1.0) * sq_dist(p, &centroids[b]);
                if cost < gain - 1e-12 * gain.max(1.0) && best.is_none_or(|(_, c)| cost < c) {
                    best = Some((b, cost));
                }
            }
            let Some((b, _)) = best else { continue };
            let nb = counts[b] as f64;
            for d in 0..dim {
                centroids[a][d] = (centroids[a][d] * na - p[d]) / (na - 1.0);
                centroids[b][d] = (centroids[b][d] * nb + p[d]) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            labels[i] = b;
            moved = true;
            any = true;
        }
        if !moved {
            break;
        }
    }
    any.then_some(centroids)
}

/// A single seeded k-means++ / Lloyd run. At each assignment fixpoint a
/// transfer pass is tried; the run stops at a fixpoint no transfer improves,
/// or after `max_iters` centroid updates.
pub fn kmeans_single(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansRun> {
    let dim = check_points(points)?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::NotEnoughData(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut prev: Option<Vec<usize>> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut iter = 0;
    loop {
        let (labels, dists): (Vec<usize>, Vec<f64>) =
            points.iter().map(|p| nearest(&centroids, p)).unzip();
        let inertia: f64 = dists.iter().sum();
        if let Some(&last) = history.last() {
            debug_assert!(
                inertia <= last + 1e-9 * last.abs().max(1.0),
                "inertia increased: {last} -> {inertia}"
            );
        }
        history.push(inertia);
        let converged = prev.as_ref() == Some(&labels);
        if converged && iter < max_iters {
            if let Some(moved) = transfer_points(points, &labels, k) {
                centroids = moved;
                prev = None;
                iter += 1;
                continue;
            }
        }
        if converged || iter == max_iters {
            return Ok(KMeansRun {
                centroids,
                labels,
                inertia,
                inertia_history: history,
                converged,
            });
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut spare = dists.clone();
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = spare
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                spare[far] = -1.0;
                centroids[j] = points[far].clone();
            }
        }
        prev = Some(labels);
        iter += 1;
    }
}

/// Best of `config.restarts` seeded runs by inertia (earliest run wins ties).
pub fn fit_kmeans(points: &[Vec<f64>], k: usize, seed: u64, config: &KMeansConfig) -> Result<ClusterModel> {
    let mut best: Option<KMeansRun> = None;
    for r in 0..config.restarts.max(1) {
        let run = kmeans_single(points, k, derive_seed(seed, r as u64), config.max_iters)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterModel {
        k,
        centroids: best.centroids,
        seed,
        inertia: best.inertia,
        silhouette: None,
    })
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map(|c| c.len()).unwrap_or(0)
    }

    /// Nearest centroid; ties go to the lowest cluster id.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(nearest(&self.centroids, x).0)
    }

    pub fn assign_all(&self, points: &[Vec<f64>]) -> Result<Vec<usize>> {
        points.iter().map(|p| self.assign(p)).collect()
    }

    /// Sum of squared distances of `points` to their assigned centroids.
    pub fn inertia_of(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| nearest(&self.centroids, p).1).sum()
    }
}

/// Pairwise Euclidean distances, row-major `n × n`.
fn distance_matrix(points: &[&Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(points[i], points[j]).sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn silhouette_from_matrix(dist: &[f64], labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if n < 2 || sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Degenerate(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[labels[j]] += dist[i * n + j];
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
    Ok(total / n as f64)
}

/// Mean silhouette over all points. Singleton-cluster points contribute 0,
/// as do points with `a = b = 0`.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Misaligned(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    check_points(points)?;
    let refs: Vec<&Vec<f64>> = points.iter().collect();
    silhouette_from_matrix(&distance_matrix(&refs), labels)
}

fn single_cluster(points: &[Vec<f64>], seed: u64) -> Result<ClusterModel> {
    let dim = check_points(points)?;
    let mut mean = vec![0.0; dim];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= points.len() as f64);
    let model = ClusterModel {
        k: 1,
        centroids: vec![mean],
        seed,
        inertia: 0.0,
        silhouette: None,
    };
    Ok(ClusterModel {
        inertia: model.inertia_of(points),
        ..model
    })
}

/// Fits `k = 2..=min(k_max, n-1)` and keeps the best silhouette (ties go to
/// the smaller `k`). Falls back to a single cluster when every silhouette is
/// at most [`MIN_SILHOUETTE`] or there are fewer than three points.
pub fn select_k(points: &[Vec<f64>], seed: u64, config: &KMeansConfig) -> Result<ClusterModel> {
    check_points(points)?;
    let n = points.len();
    let k_hi = config.k_max.min(n.saturating_sub(1));
    if n < 3 || k_hi < 2 {
        return single_cluster(points, seed);
    }

    let sample: Vec<usize> = if n > config.silhouette_sample {
        let mut rng = seeded(derive_seed(seed, u64::MAX));
        let mut idx = rand::seq::index::sample(&mut rng, n, config.silhouette_sample).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let sampled: Vec<&Vec<f64>> = sample.iter().map(|&i| &points[i]).collect();
    let dist = distance_matrix(&sampled);

    let mut best: Option<(f64, ClusterModel)> = None;
    for k in 2..=k_hi {
        let model = fit_kmeans(points, k, derive_seed(seed, k as u64), config)?;
        let labels: Vec<usize> = sampled.iter().map(|p| nearest(&model.centroids, p).0).collect();
        let s = match silhouette_from_matrix(&dist, &labels) {
            Ok(s) => s,
            Err(_) => continue,
        };
        log::debug!("select_k: k = {k}, silhouette = {s:.4}");
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((
                s,
                ClusterModel {
                    silhouette: Some(s),
                    ..model
                },
            ));
        }
    }
    match best {
        Some((s, model)) if s > MIN_SILHOUETTE => Ok(model),
        _ => single_cluster(points, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        centers
            .iter()
            .flat_map(|&(x, y)| {
                (0..per)
                    .map(|_| vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 2.0]];
        let m = fit_kmeans(&pts, 1, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(m.centroids[0], vec![2.0, 2.0]);
    }

    #[test]
    fn duplicates_have_zero_inertia() {
        let pts = vec![vec![1.5, -2.0]; 6];
        let m = fit_kmeans(&pts, 1, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(m.centroids[0], vec![1.5, -2.0]);
        assert_eq!(m.inertia, 0.0);
        // More clusters than distinct points still terminates.
        let m = fit_kmeans(&pts, 3, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![0.0]; 2];
        assert!(matches!(
            fit_kmeans(&pts, 3, 0, &KMeansConfig::default()),
            Err(Error::NotEnoughData(_))
        ));
    }

    #[test]
    fn assignment_rules() {
        let m = ClusterModel {
            k: 3,
            centroids: vec![vec![0.0], vec![2.0], vec![5.0]],
            seed: 0,
            inertia: 0.0,
            silhouette: None,
        };
        assert_eq!(m.assign(&[5.0]).unwrap(), 2);
        assert_eq!(m.assign(&[1.0]).unwrap(), 0);
        for j in 0..3 {
            assert_eq!(m.assign(&m.centroids[j].clone()).unwrap(), j);
        }
        assert!(m.assign(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn fitted_labels_are_a_fixpoint() {
        let pts = blobs(&[(0.0, 0.0), (5.0, 5.0), (0.0, 6.0)], 20, 1.0, 4);
        let run = kmeans_single(&pts, 3, 11, 100).unwrap();
        assert!(run.converged);
        let model = ClusterModel {
            k: 3,
            centroids: run.centroids.clone(),
            seed: 11,
            inertia: run.inertia,
            silhouette: None,
        };
        assert_eq!(model.assign_all(&pts).unwrap(), run.labels);
        for w in run.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn silhouette_rules() {
        let pts = blobs(&[(0.0, 0.0), (100.0, 0.0)], 10, 0.5, 1);
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        assert!(silhouette(&pts, &labels).unwrap() > 0.9);

        let same = vec![vec![1.0, 1.0]; 4];
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(silhouette(&[vec![0.0], vec![3.0]], &[0, 1]).unwrap(), 0.0);
        assert!(silhouette(&same, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn select_k_finds_three_blobs() {
        let pts = blobs(&[(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)], 30, 1.0, 2);
        let m = select_k(&pts, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(m.k, 3);
    }

    #[test]
    fn select_k_honors_cap() {
        let centers: Vec<(f64, f64)> = (0..6).map(|i| ((i * 30) as f64, ((i % 2) * 30) as f64)).collect();
        let pts = blobs(&centers, 15, 0.5, 3);
        let m = select_k(&pts, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(m.k, 5);
    }

    #[test]
    fn select_k_small_inputs() {
        let m = select_k(&[vec![1.0], vec![3.0]], 0, &KMeansConfig::default()).unwrap();
        assert_eq!(m.k, 1);
        assert_eq!(m.centroids[0], vec![2.0]);
    }
}
