//! Independent reference implementations used by the integration and
//! acceptance tests. None of these call into the code they check.

#![allow(dead_code)]

use hitl_core::clustering::{fit_kmeans, KMeansConfig};
use hitl_core::embedding::AutoencoderParams;
use hitl_core::nn::Parameters;
use hitl_core::relevancy::{select_anomalies, CountVector, ScoredCandidate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// erf by its Maclaurin series; converges fast enough for |x| ≤ 3.
pub fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = x;
    let mut factorial = 1.0;
    for n in 0..80 {
        if n > 0 {
            factorial *= n as f64;
            power *= x * x;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * power / (factorial * (2 * n + 1) as f64);
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// Two-sided normal mass inside `±z`.
pub fn two_sided_mass(z: f64) -> f64 {
    erf_series(z.abs() / std::f64::consts::SQRT_2)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Smallest within-cluster sum of squares over every assignment of the
/// points into at most `k` groups.
pub fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| labels[i] == c).map(|i| &points[i]).collect();
            if members.is_empty() {
                continue;
            }
            let mut centroid = vec![0.0; dim];
            for p in &members {
                centroid.iter_mut().zip(p.iter()).for_each(|(c, v)| *c += v);
            }
            centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
            total += members.iter().map(|p| sq_dist(p, &centroid)).sum::<f64>();
        }
        best = best.min(total);
        // next assignment in base k
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

pub struct KMeansCase {
    pub points: Vec<Vec<f64>>,
    pub k: usize,
}

pub fn kmeans_case(seed: u64) -> KMeansCase {
    let mut r = rng(seed);
    let n = r.random_range(3..=8);
    let k = r.random_range(1..=3usize).min(n);
    let dim = r.random_range(1..=3);
    let points = (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-5.0..5.0)).collect())
        .collect();
    KMeansCase { points, k }
}

/// `(best-of-10 inertia, brute-force optimum)`.
pub fn kmeans_vs_brute_force(case: &KMeansCase, seed: u64) -> (f64, f64) {
    let config = KMeansConfig {
        restarts: 10,
        ..Default::default()
    };
    let fitted = fit_kmeans(&case.points, case.k, seed, &config).expect("k-means fit");
    (fitted.inertia, brute_force_inertia(&case.points, case.k))
}

pub struct SelectionCase {
    pub candidates: Vec<ScoredCandidate>,
    pub n_adj: CountVector,
}

/// Scores are multiples of 1/8 so ties occur and sums are exact.
pub fn selection_case(seed: u64) -> SelectionCase {
    let mut r = rng(seed);
    let n = r.random_range(0..=10);
    let k = r.random_range(1..=4);
    let mut times: Vec<i64> = (0..40).collect();
    let mut candidates = Vec::with_capacity(n);
    for _ in 0..n {
        let t = times.swap_remove(r.random_range(0..times.len()));
        candidates.push(ScoredCandidate {
            time_index: t,
            score: r.random_range(0..8) as f64 / 8.0,
            cluster_id: r.random_range(0..k),
        });
    }
    let n_adj = CountVector::new((0..k).map(|_| r.random_range(0..=4)).collect());
    SelectionCase { candidates, n_adj }
}

/// Among subsets that take exactly `min(n_adj_j, |cluster j|)` points from
/// every cluster, the one with the largest score sum; ties go to the
/// lexicographically smallest sorted index list.
pub fn brute_force_selection(case: &SelectionCase) -> Vec<i64> {
    let c = &case.candidates;
    let counts = case.n_adj.counts();
    let sizes: Vec<usize> = (0..counts.len())
        .map(|j| c.iter().filter(|x| x.cluster_id == j).count())
        .collect();
    let mut best: Option<(f64, Vec<i64>)> = None;
    for mask in 0u32..(1 << c.len()) {
        let chosen: Vec<&ScoredCandidate> = (0..c.len()).filter(|i| mask & (1 << i) != 0).map(|i| &c[i]).collect();
        let feasible = (0..counts.len())
            .all(|j| chosen.iter().filter(|x| x.cluster_id == j).count() == counts[j].min(sizes[j]));
        if !feasible {
            continue;
        }
        let sum: f64 = chosen.iter().map(|x| x.score).sum();
        let mut idx: Vec<i64> = chosen.iter().map(|x| x.time_index).collect();
        idx.sort_unstable();
        let better = match &best {
            None => true,
            Some((s, b)) => sum > *s || (sum == *s && idx < *b),
        };
        if better {
            best = Some((sum, idx));
        }
    }
    best.map(|(_, idx)| idx).unwrap_or_default()
}

pub fn selection_matches(case: &SelectionCase) -> bool {
    select_anomalies(&case.candidates, &case.n_adj) == brute_force_selection(case)
}

/// Worst component-wise relative error between the analytic autoencoder
/// gradient and central differences, for one random tiny configuration.
/// Components where both values are below `1e-7` are compared absolutely.
pub fn autoencoder_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let hidden = r.random_range(1..=3);
    let len = r.random_range(2..=4);
    let windows: Vec<Vec<f64>> = (0..r.random_range(1..=3))
        .map(|_| (0..len).map(|_| r.random_range(-1.5..1.5)).collect())
        .collect();
    let mut params = AutoencoderParams::init(hidden, seed);
    let (_, grad) = params.loss_and_gradient(&windows);
    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|t| t.to_vec()).collect();

    let loss = |p: &AutoencoderParams| -> f64 {
        windows.iter().map(|w| p.window_loss(w, None, 0.0)).sum::<f64>() / windows.len() as f64
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = params.tensors()[ti][j];
            params.tensors_mut()[ti][j] = orig + eps;
            let up = loss(&params);
            params.tensors_mut()[ti][j] = orig - eps;
            let down = loss(&params);
            params.tensors_mut()[ti][j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs());
            let err = if denom < 1e-7 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            worst = worst.max(err);
            k += 1;
        }
    }
    worst
}
