//! Cluster relevancy and the per-cluster adjustment of how many anomalies to
//! report.
//!
//! Given the cluster distribution of all candidates `d_c`, of positively
//! reviewed candidates `d⁺` and of negatively reviewed candidates `d⁻`, the
//! relevancy of cluster `j` is
//!
//! ```text
//! r_j = exp((d⁺_j − d_c_j) / d_c_j) / exp((d⁻_j − d_c_j) / d_c_j)
//!     = exp((d⁺_j − d⁻_j) / d_c_j)
//! ```
//!
//! clipped into `[L, U]`. The next batch reports `⌊n_j · r_j⌋` anomalies from
//! cluster `j`, where `n_j` is how many of the cluster's points the base
//! detector flagged, picking the highest base scores inside the cluster.

use serde::{Deserialize, Serialize};

use crate::series::Label;
use crate::{Error, Result};

/// Tolerance on "sums to one".
const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub time_index: i64,
    pub cluster_id: usize,
}

/// A reviewed point with its cluster under the current clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackAssignment {
    pub time_index: i64,
    pub cluster_id: usize,
    pub label: Label,
}

/// `d_c`, `d⁺`, `d⁻`: each sums to one, or is all-zero when its set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistributions {
    pub d_c: Vec<f64>,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
}

impl ClusterDistributions {
    pub fn new(d_c: Vec<f64>, d_plus: Vec<f64>, d_minus: Vec<f64>) -> Result<Self> {
        let k = d_c.len();
        for (name, d) in [("d_c", &d_c), ("d_plus", &d_plus), ("d_minus", &d_minus)] {
            if d.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: d.len(),
                });
            }
            if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidConfig(format!("{name} has a negative or non-finite entry")));
            }
            let sum: f64 = d.iter().sum();
            if sum != 0.0 && (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidConfig(format!("{name} sums to {sum}, not 0 or 1")));
            }
        }
        Ok(Self { d_c, d_plus, d_minus })
    }

    pub fn k(&self) -> usize {
        self.d_c.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevancyConfig {
    pub upper_bound: f64,
    pub lower_bound: f64,
}

impl Default for RelevancyConfig {
    fn default() -> Self {
        Self {
            upper_bound: 2.0,
            lower_bound: 0.1,
        }
    }
}

impl RelevancyConfig {
    pub fn new(upper_bound: f64, lower_bound: f64) -> Result<Self> {
        let c = Self {
            upper_bound,
            lower_bound,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower_bound > 0.0 && self.lower_bound < 1.0 && self.upper_bound > 1.0)
            || !self.upper_bound.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "relevancy bounds must satisfy 0 < L < 1 < U, got L = {}, U = {}",
                self.lower_bound, self.upper_bound
            )));
        }
        Ok(())
    }
}

/// Per-cluster relevancy multipliers in `[L, U]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelevancyVector(Vec<f64>);

impl RelevancyVector {
    pub fn ones(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_neutral(&self) -> bool {
        self.0.iter().all(|&r| r == 1.0)
    }
}

/// Per-cluster anomaly counts (`N^b` or `N^adj`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountVector(Vec<usize>);

impl CountVector {
    pub fn new(counts: Vec<usize>) -> Self {
        Self(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

fn normalized_histogram(ids: impl Iterator<Item = usize>, k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    let mut n = 0usize;
    for id in ids {
        h[id] += 1.0;
        n += 1;
    }
    if n > 0 {
        h.iter_mut().for_each(|v| *v /= n as f64);
    }
    h
}

fn check_ids(ids: impl Iterator<Item = usize>, k: usize) -> Result<()> {
    for id in ids {
        if id >= k {
            return Err(Error::InvalidConfig(format!("cluster id {id} out of range for k = {k}")));
        }
    }
    Ok(())
}

/// Candidate, positive and negative histograms over clusters. Feedback on
/// points outside the candidate set is ignored (the distributions are over
/// the intersection with the candidates).
pub fn cluster_distributions(
    candidates: &[ClusterAssignment],
    feedback: &[FeedbackAssignment],
    k: usize,
) -> Result<ClusterDistributions> {
    if candidates.is_empty() {
        return Err(Error::NotEnoughData("candidate set is empty".into()));
    }
    check_ids(candidates.iter().map(|c| c.cluster_id), k)?;
    check_ids(feedback.iter().map(|f| f.cluster_id), k)?;
    let mut known: Vec<i64> = candidates.iter().map(|c| c.time_index).collect();
    known.sort_unstable();
    let in_candidates = |f: &&FeedbackAssignment| known.binary_search(&f.time_index).is_ok();
    let of = |label: Label| {
        normalized_histogram(
            feedback
                .iter()
                .filter(in_candidates)
                .filter(|f| f.label == label)
                .map(|f| f.cluster_id),
            k,
        )
    };
    Ok(ClusterDistributions {
        d_c: normalized_histogram(candidates.iter().map(|c| c.cluster_id), k),
        d_plus: of(Label::Positive),
        d_minus: of(Label::Negative),
    })
}

/// `r_j = clip(exp((d⁺_j − d⁻_j) / d_c_j), L, U)`, with `r_j = 1` for empty
/// clusters and all-ones when there is no feedback.
pub fn relevancy(dist: &ClusterDistributions, config: &RelevancyConfig) -> RelevancyVector {
    let no_feedback = dist.d_plus.iter().chain(&dist.d_minus).all(|&v| v == 0.0);
    if no_feedback {
        return RelevancyVector::ones(dist.k());
    }
    let r = (0..dist.k())
        .map(|j| {
            let dc = dist.d_c[j];
            if dc == 0.0 {
                1.0
            } else {
                ((dist.d_plus[j] - dist.d_minus[j]) / dc)
                    .exp()
                    .clamp(config.lower_bound, config.upper_bound)
            }
        })
        .collect();
    RelevancyVector(r)
}

/// Histogram of base detections over clusters.
pub fn base_counts(detected: &[ClusterAssignment], k: usize) -> Result<CountVector> {
    check_ids(detected.iter().map(|d| d.cluster_id), k)?;
    let mut counts = vec![0usize; k];
    detected.iter().for_each(|d| counts[d.cluster_id] += 1);
    Ok(CountVector(counts))
}

/// `⌊n_j · r_j⌋` per cluster.
pub fn adjust_counts(n_base: &CountVector, r: &RelevancyVector) -> Result<CountVector> {
    if n_base.len() != r.len() {
        return Err(Error::DimensionMismatch {
            expected: n_base.len(),
            got: r.len(),
        });
    }
    Ok(CountVector(
        n_base
            .0
            .iter()
            .zip(&r.0)
            .map(|(&n, &r)| (n as f64 * r).floor() as usize)
            .collect(),
    ))
}

/// A candidate point eligible for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub time_index: i64,
    pub score: f64,
    pub cluster_id: usize,
}

/// For every cluster `j`, the `min(n_adj_j, |cluster j|)` highest-scoring
/// candidates (earlier time index wins ties). Result sorted by time index.
/// Candidates whose cluster id has no entry in `n_adj` are never selected.
pub fn select_anomalies(candidates: &[ScoredCandidate], n_adj: &CountVector) -> Vec<i64> {
    let mut ranked: Vec<&ScoredCandidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.time_index.cmp(&b.time_index))
    });
    let mut remaining = n_adj.0.clone();
    let mut out: Vec<i64> = ranked
        .into_iter()
        .filter(|c| match remaining.get_mut(c.cluster_id) {
            Some(left) if *left > 0 => {
                *left -= 1;
                true
            }
            _ => false,
        })
        .map(|c| c.time_index)
        .collect();
    out.sort_unstable();
    out
}
