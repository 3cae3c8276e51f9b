//! Random cut forest over shingled values.
//!
//! Each tree keeps a reservoir sample of training shingles and is built by
//! recursive random cuts: the cut dimension is drawn with probability
//! proportional to its extent and the cut value uniformly inside it. A query
//! point's score is `2^(−E[h] / c(n))`, where `E[h]` is its expected isolation
//! depth averaged over trees and `c(n)` the average unsuccessful-search path
//! length in a binary search tree of `n` points.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded};
use crate::series::{clamp_score, ScoreSeries, TimeSeries};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcfConfig {
    pub num_trees: usize,
    pub tree_capacity: usize,
    pub shingle_size: usize,
    pub seed: u64,
}

impl Default for RcfConfig {
    fn default() -> Self {
        Self {
            num_trees: 50,
            tree_capacity: 256,
            shingle_size: 4,
            seed: 0,
        }
    }
}

impl RcfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 || self.tree_capacity == 0 || self.shingle_size == 0 {
            return Err(Error::InvalidConfig(
                "num_trees, tree_capacity and shingle_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `c(n) = 2·H(n−1) − 2(n−1)/n`, with `c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n as f64 - 1.0) / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        point: Vec<f64>,
        mass: usize,
    },
    Cut {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCutTree {
    nodes: Vec<Node>,
    root: usize,
    size: usize,
}

fn bounding_box(points: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut lower = points[0].clone();
    let mut upper = points[0].clone();
    for p in &points[1..] {
        for (d, &v) in p.iter().enumerate() {
            lower[d] = lower[d].min(v);
            upper[d] = upper[d].max(v);
        }
    }
    (lower, upper)
}

impl RandomCutTree {
    /// Builds a tree over `points` (all of equal dimension, at least one).
    pub fn build<R: Rng>(points: &[Vec<f64>], rng: &mut R) -> Self {
        assert!(!points.is_empty(), "a tree needs at least one point");
        let refs: Vec<&Vec<f64>> = points.iter().collect();
        let mut tree = Self {
            nodes: Vec::new(),
            root: 0,
            size: points.len(),
        };
        tree.root = tree.grow(refs, rng);
        tree
    }

    fn grow<R: Rng>(&mut self, points: Vec<&Vec<f64>>, rng: &mut R) -> usize {
        let (lower, upper) = bounding_box(&points);
        let extents: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| u - l).collect();
        let total: f64 = extents.iter().sum();
        if !(total > 0.0) {
            self.nodes.push(Node::Leaf {
                point: points[0].clone(),
                mass: points.len(),
            });
            return self.nodes.len() - 1;
        }
        let mut r = rng.random_range(0.0..total);
        let mut dim = 0;
        for (d, &e) in extents.iter().enumerate() {
            if e > 0.0 {
                dim = d;
                if r < e {
                    break;
                }
                r -= e;
            }
        }
        let value = rng.random_range(lower[dim]..upper[dim]);
        let (left, right): (Vec<_>, Vec<_>) = points.into_iter().partition(|p| p[dim] <= value);
        let left = self.grow(left, rng);
        let right = self.grow(right, rng);
        self.nodes.push(Node::Cut {
            dim,
            value,
            left,
            right,
            lower,
            upper,
        });
        self.nodes.len() - 1
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Expected depth at which `x` is isolated.
    pub fn expected_depth(&self, x: &[f64]) -> f64 {
        let mut node = self.root;
        let mut depth = 0.0;
        let mut reach = 1.0;
        let mut expected = 0.0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { point, mass } => {
                    let tail = if point.as_slice() == x {
                        depth + average_path_length(*mass)
                    } else {
                        depth + 1.0
                    };
                    return expected + reach * tail;
                }
                Node::Cut {
                    dim,
                    value,
                    left,
                    right,
                    lower,
                    upper,
                } => {
                    let mut span = 0.0;
                    let mut inner = 0.0;
                    for d in 0..x.len() {
                        span += upper[d].max(x[d]) - lower[d].min(x[d]);
                        inner += upper[d] - lower[d];
                    }
                    let p_sep = if span > 0.0 { (span - inner) / span } else { 0.0 };
                    // Separated by a cut above this node: isolated at depth + 1.
                    expected += reach * p_sep * (depth + 1.0);
                    reach *= 1.0 - p_sep;
                    depth += 1.0;
                    node = if x[*dim] <= *value { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcfModel {
    pub config: RcfConfig,
    pub trees: Vec<RandomCutTree>,
    /// Last `shingle_size − 1` training values, prepended when scoring.
    pub history: Vec<f64>,
}

fn shingles(values: &[f64], size: usize) -> Vec<Vec<f64>> {
    values.windows(size).map(|w| w.to_vec()).collect()
}

pub fn fit_rcf(train: &TimeSeries, config: &RcfConfig) -> Result<RcfModel> {
    config.validate()?;
    let v = train.values();
    if v.len() < config.shingle_size {
        return Err(Error::NotEnoughData(format!(
            "random cut forest needs at least {} points, series {} has {}",
            config.shingle_size,
            train.id(),
            v.len()
        )));
    }
    let stream = shingles(v, config.shingle_size);
    let trees = (0..config.num_trees)
        .map(|t| {
            let mut rng = seeded(derive_seed(config.seed, t as u64));
            let mut sample: Vec<Vec<f64>> = Vec::with_capacity(config.tree_capacity);
            for (i, s) in stream.iter().enumerate() {
                if i < config.tree_capacity {
                    sample.push(s.clone());
                } else {
                    let j = rng.random_range(0..=i);
                    if j < config.tree_capacity {
                        sample[j] = s.clone();
                    }
                }
            }
            RandomCutTree::build(&sample, &mut rng)
        })
        .collect();
    let keep = config.shingle_size - 1;
    Ok(RcfModel {
        config: config.clone(),
        trees,
        history: v[v.len() - keep..].to_vec(),
    })
}

impl RcfModel {
    pub fn score_point(&self, x: &[f64]) -> f64 {
        let depth: f64 = self.trees.iter().map(|t| t.expected_depth(x)).sum::<f64>()
            / self.trees.len() as f64;
        let n = self.trees.iter().map(|t| t.size()).max().unwrap_or(2).max(2);
        clamp_score(2f64.powf(-depth / average_path_length(n)))
    }

    /// Scores `series` as the continuation of the training data: the shingle
    /// ending at each point is completed with the retained training tail.
    pub fn score(&self, series: &TimeSeries) -> Result<ScoreSeries> {
        let mut buf = self.history.clone();
        buf.extend_from_slice(series.values());
        let scores = shingles(&buf, self.config.shingle_size)
            .iter()
            .map(|s| self.score_point(s))
            .collect();
        ScoreSeries::new(series.id(), series.start_index(), scores)
    }
}
