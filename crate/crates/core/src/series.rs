//! Uniformly sampled series, black-box scores, thresholds and feedback.
//!
//! Time is a global, contiguous integer index: element `j` of a series
//! starting at `start_index` lives at `start_index + j`. Every other module
//! speaks in these global indices.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest score a detector may emit. Scores live in `[0, 1)`.
pub const MAX_SCORE: f64 = 1.0 - 1e-9;

/// Clamps a raw detector output into `[0, MAX_SCORE]`. NaN maps to 0.
pub fn clamp_score(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, MAX_SCORE)
    }
}

/// An evenly spaced univariate series with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    id: String,
    start_index: i64,
    values: Vec<f64>,
    labels: Option<Vec<bool>>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, start_index: i64, values: Vec<f64>) -> Result<Self> {
        Self::build(id.into(), start_index, values, None)
    }

    pub fn with_labels(
        id: impl Into<String>,
        start_index: i64,
        values: Vec<f64>,
        labels: Vec<bool>,
    ) -> Result<Self> {
        Self::build(id.into(), start_index, values, Some(labels))
    }

    fn build(
        id: String,
        start_index: i64,
        values: Vec<f64>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NotEnoughData(format!("series {id} has no values")));
        }
        if let Some(l) = &labels {
            if l.len() != values.len() {
                return Err(Error::Misaligned(format!(
                    "series {id}: {} labels for {} values",
                    l.len(),
                    values.len()
                )));
            }
        }
        Ok(Self {
            id,
            start_index,
            values,
            labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    /// One past the last global index.
    pub fn end_index(&self) -> i64 {
        self.start_index + self.values.len() as i64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, time_index: i64) -> bool {
        time_index >= self.start_index && time_index < self.end_index()
    }

    pub fn value_at(&self, time_index: i64) -> Option<f64> {
        self.position(time_index).map(|j| self.values[j])
    }

    pub fn label_at(&self, time_index: i64) -> Option<bool> {
        let j = self.position(time_index)?;
        self.labels.as_ref().map(|l| l[j])
    }

    fn position(&self, time_index: i64) -> Option<usize> {
        self.contains(time_index)
            .then(|| (time_index - self.start_index) as usize)
    }

    /// The sub-series covering the half-open global range `[start, end)`.
    pub fn slice(&self, start: i64, end: i64) -> Result<TimeSeries> {
        if start >= end || start < self.start_index || end > self.end_index() {
            return Err(Error::Misaligned(format!(
                "range [{start}, {end}) outside series {} [{}, {})",
                self.id,
                self.start_index,
                self.end_index()
            )));
        }
        let a = (start - self.start_index) as usize;
        let b = (end - self.start_index) as usize;
        Ok(TimeSeries {
            id: self.id.clone(),
            start_index: start,
            values: self.values[a..b].to_vec(),
            labels: self.labels.as_ref().map(|l| l[a..b].to_vec()),
        })
    }

    pub fn batch(&self, batch: &Batch) -> Result<TimeSeries> {
        self.slice(batch.start_index, batch.end_index)
    }

    /// Splits the series into consecutive batches of `batch_length` points;
    /// the last batch may be shorter.
    pub fn batches(&self, batch_length: usize) -> Result<Vec<Batch>> {
        if batch_length == 0 {
            return Err(Error::InvalidConfig("batch length must be positive".into()));
        }
        let mut out = Vec::new();
        let mut start = self.start_index;
        while start < self.end_index() {
            let end = (start + batch_length as i64).min(self.end_index());
            out.push(Batch::new(self.id.clone(), start, end)?);
            start = end;
        }
        Ok(out)
    }
}

/// Black-box anomaly scores aligned with a [`TimeSeries`] range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    series_id: String,
    start_index: i64,
    scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(series_id: impl Into<String>, start_index: i64, scores: Vec<f64>) -> Result<Self> {
        let series_id = series_id.into();
        if let Some((j, p)) = scores
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..1.0).contains(*p))
        {
            return Err(Error::InvalidConfig(format!(
                "series {series_id}: score {p} at position {j} outside [0, 1)"
            )));
        }
        Ok(Self {
            series_id,
            start_index,
            scores,
        })
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn end_index(&self) -> i64 {
        self.start_index + self.scores.len() as i64
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score_at(&self, time_index: i64) -> Option<f64> {
        if time_index < self.start_index || time_index >= self.end_index() {
            return None;
        }
        Some(self.scores[(time_index - self.start_index) as usize])
    }

    pub fn slice(&self, start: i64, end: i64) -> Result<ScoreSeries> {
        if start >= end || start < self.start_index || end > self.end_index() {
            return Err(Error::Misaligned(format!(
                "range [{start}, {end}) outside scores of {} [{}, {})",
                self.series_id,
                self.start_index,
                self.end_index()
            )));
        }
        let a = (start - self.start_index) as usize;
        let b = (end - self.start_index) as usize;
        Ok(ScoreSeries {
            series_id: self.series_id.clone(),
            start_index: start,
            scores: self.scores[a..b].to_vec(),
        })
    }

    /// Checks that these scores cover exactly the range of `series`.
    pub fn check_aligned(&self, series: &TimeSeries) -> Result<()> {
        if self.series_id != series.id()
            || self.start_index != series.start_index()
            || self.len() != series.len()
        {
            return Err(Error::Misaligned(format!(
                "scores {} [{}, {}) do not cover series {} [{}, {})",
                self.series_id,
                self.start_index,
                self.end_index(),
                series.id(),
                series.start_index(),
                series.end_index()
            )));
        }
        Ok(())
    }
}

/// Detection threshold `tau_a` and candidate threshold `tau_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct Thresholds {
    tau_a: f64,
    tau_c: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    tau_a: f64,
    tau_c: f64,
}

impl TryFrom<RawThresholds> for Thresholds {
    type Error = Error;

    fn try_from(raw: RawThresholds) -> Result<Self> {
        Thresholds::new(raw.tau_a, raw.tau_c)
    }
}

impl Thresholds {
    pub fn new(tau_a: f64, tau_c: f64) -> Result<Self> {
        if !(tau_a > 0.0 && tau_a < 1.0) {
            return Err(Error::InvalidConfig(format!("tau_a = {tau_a} not in (0, 1)")));
        }
        if !(0.0..=1.0).contains(&tau_c) {
            return Err(Error::InvalidConfig(format!("tau_c = {tau_c} not in [0, 1]")));
        }
        if tau_c > tau_a {
            return Err(Error::InvalidConfig(format!(
                "tau_c = {tau_c} exceeds tau_a = {tau_a}; candidates must include detections"
            )));
        }
        Ok(Self { tau_a, tau_c })
    }

    pub fn tau_a(&self) -> f64 {
        self.tau_a
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_a: 0.99,
            tau_c: 0.9,
        }
    }
}

/// A half-open global index range `[start_index, end_index)` of one series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub series_id: String,
    pub start_index: i64,
    pub end_index: i64,
}

impl Batch {
    pub fn new(series_id: impl Into<String>, start_index: i64, end_index: i64) -> Result<Self> {
        if start_index >= end_index {
            return Err(Error::InvalidConfig(format!(
                "empty batch [{start_index}, {end_index})"
            )));
        }
        Ok(Self {
            series_id: series_id.into(),
            start_index,
            end_index,
        })
    }

    pub fn len(&self) -> usize {
        (self.end_index - self.start_index) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start_index >= self.end_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// A user's verdict on one reported anomaly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub series_id: String,
    pub time_index: i64,
    pub label: Label,
}

impl FeedbackRecord {
    pub fn new(series_id: impl Into<String>, time_index: i64, label: Label) -> Self {
        Self {
            series_id: series_id.into(),
            time_index,
            label,
        }
    }
}

fn indices_above(scores: &ScoreSeries, threshold: f64) -> Vec<i64> {
    scores
        .scores()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(j, _)| scores.start_index() + j as i64)
        .collect()
}

/// Global indices whose score strictly exceeds `tau_c`, ascending.
pub fn candidate_indices(scores: &ScoreSeries, thresholds: &Thresholds) -> Vec<i64> {
    indices_above(scores, thresholds.tau_c())
}

/// Global indices whose score strictly exceeds `tau_a`, ascending.
pub fn detected_indices(scores: &ScoreSeries, thresholds: &Thresholds) -> Vec<i64> {
    indices_above(scores, thresholds.tau_a())
}
