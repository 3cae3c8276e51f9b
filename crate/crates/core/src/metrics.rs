//! Point-wise precision, recall and F1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::series::TimeSeries;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.false_negative += other.false_negative;
    }

    pub fn metrics(self) -> Metrics {
        let tp = self.true_positive as f64;
        let precision = if self.true_positive + self.false_positive > 0 {
            tp / (tp + self.false_positive as f64)
        } else {
            0.0
        };
        let recall = if self.true_positive + self.false_negative > 0 {
            tp / (tp + self.false_negative as f64)
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
            true_positive: self.true_positive,
            false_positive: self.false_positive,
            false_negative: self.false_negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl Metrics {
    pub fn counts(&self) -> Counts {
        Counts {
            true_positive: self.true_positive,
            false_positive: self.false_positive,
            false_negative: self.false_negative,
        }
    }
}

/// How a reported point is matched against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Each point counts on its own.
    #[default]
    Pointwise,
    /// A hit anywhere inside a contiguous labeled segment marks the whole
    /// segment as detected.
    PointAdjust,
}

/// Confusion counts of `reported` against the labels of `series`.
pub fn count_series(series: &TimeSeries, reported: &BTreeSet<i64>, mode: Evaluation) -> Result<Counts> {
    let labels = series
        .labels()
        .ok_or_else(|| Error::InvalidConfig(format!("series {} has no labels", series.id())))?;
    if let Some(&t) = reported.iter().find(|&&t| !series.contains(t)) {
        return Err(Error::Misaligned(format!(
            "reported index {t} outside series {}",
            series.id()
        )));
    }
    let start = series.start_index();
    let mut hit: Vec<bool> = labels
        .iter()
        .enumerate()
        .map(|(i, _)| reported.contains(&(start + i as i64)))
        .collect();
    if mode == Evaluation::PointAdjust {
        let mut i = 0;
        while i < labels.len() {
            if !labels[i] {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < labels.len() && labels[j] {
                j += 1;
            }
            if hit[i..j].iter().any(|&h| h) {
                hit[i..j].fill(true);
            }
            i = j;
        }
    }
    let mut c = Counts::default();
    for (&label, &h) in labels.iter().zip(&hit) {
        match (label, h) {
            (true, true) => c.true_positive += 1,
            (false, true) => c.false_positive += 1,
            (true, false) => c.false_negative += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}
