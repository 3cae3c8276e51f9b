//! The sequential batch loop for one series.
//!
//! Batch 1 reports whatever the base detector flags. After each batch the
//! user (or the simulated oracle) labels some reported points, and the
//! embedding, clustering and relevancy vector are retrained on every
//! candidate seen so far. From batch 2 on, each cluster may report
//! `⌊N_base · r⌋` of its candidates, ranked by the base score.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{select_k, ClusterModel, KMeansConfig};
use crate::embedding::{
    collect_contexts, train_autoencoder_with_report, ContextConfig, ContextWindow, EmbeddingConfig,
    EmbeddingModel,
};
use crate::relevancy::{
    adjust_counts, base_counts, cluster_distributions, relevancy, select_anomalies,
    ClusterAssignment, ClusterDistributions, CountVector, FeedbackAssignment, RelevancyConfig,
    RelevancyVector, ScoredCandidate,
};
use crate::rng::{derive_seed, seeded};
use crate::series::{
    candidate_indices, detected_indices, Batch, FeedbackRecord, Label, ScoreSeries, Thresholds,
    TimeSeries,
};
use crate::{Error, Result};

const FEEDBACK_STREAM: u64 = 0xFEED;
const SUBSAMPLE_STREAM: u64 = 0x5AB5;
const CLUSTER_STREAM: u64 = 0xC1u64;

/// What happens once the feedback batches are over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterFeedback {
    /// Keep adjusting with the last models and relevancy vector.
    #[default]
    ApplyLastRelevancy,
    /// Fall back to plain base-detector reports.
    ReportBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackBudget {
    pub positive: usize,
    pub negative: usize,
}

impl Default for FeedbackBudget {
    fn default() -> Self {
        Self {
            positive: 10,
            negative: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub thresholds: Thresholds,
    pub context: ContextConfig,
    pub relevancy: RelevancyConfig,
    pub embedding: EmbeddingConfig,
    pub kmeans: KMeansConfig,
    pub budget: FeedbackBudget,
    /// Feedback is collected, and models retrained, after batches
    /// `1..=feedback_batches`.
    pub feedback_batches: usize,
    /// Upper bound on autoencoder training windows per retrain. Windows
    /// carrying feedback are always kept.
    pub max_training_windows: usize,
    /// Continue from the previous embedding instead of re-initializing.
    pub warm_start: bool,
    pub after_feedback: AfterFeedback,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            context: ContextConfig::default(),
            relevancy: RelevancyConfig::default(),
            embedding: EmbeddingConfig::default(),
            kmeans: KMeansConfig::default(),
            budget: FeedbackBudget::default(),
            feedback_batches: 5,
            max_training_windows: 256,
            warm_start: true,
            after_feedback: AfterFeedback::default(),
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.relevancy.validate()?;
        self.embedding.validate()?;
        if self.context.m == 0 {
            return Err(Error::InvalidConfig("context m must be at least 1".into()));
        }
        if self.max_training_windows == 0 {
            return Err(Error::InvalidConfig("max_training_windows must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub time_index: i64,
    pub score: f64,
    pub window: ContextWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedAnomaly {
    pub time_index: i64,
    pub score: f64,
    pub cluster_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// 1-based position of the batch in the loop.
    pub batch_number: usize,
    pub batch: Batch,
    /// Sorted by time index.
    pub reported_anomalies: Vec<ReportedAnomaly>,
    pub relevancy_used: Option<RelevancyVector>,
    pub n_base: Option<CountVector>,
    pub n_adj: Option<CountVector>,
    /// Version of the models that produced the adjustment (0: none).
    pub model_version: u64,
}

impl BatchReport {
    pub fn indices(&self) -> Vec<i64> {
        self.reported_anomalies.iter().map(|a| a.time_index).collect()
    }
}

/// Current relevancy vector with the distributions it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancySnapshot {
    pub r: RelevancyVector,
    pub d_c: Vec<f64>,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
}

/// Trained models that can be saved and restored together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub embedding: EmbeddingModel,
    pub clusters: ClusterModel,
    pub relevancy: RelevancyVector,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    series_id: String,
    config: LoopConfig,
    batch_counter: usize,
    history_start: i64,
    history: Vec<f64>,
    candidates: Vec<Candidate>,
    candidate_pos: BTreeMap<i64, usize>,
    reported: BTreeSet<i64>,
    feedback: BTreeMap<i64, Label>,
    embedding: Option<EmbeddingModel>,
    clusters: Option<ClusterModel>,
    relevancy: Option<RelevancyVector>,
    distributions: Option<ClusterDistributions>,
    model_version: u64,
    retrained_at: Option<usize>,
    warm_source: Option<EmbeddingModel>,
}

impl LoopState {
    pub fn new(series_id: impl Into<String>, config: LoopConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            series_id: series_id.into(),
            config,
            batch_counter: 0,
            history_start: 0,
            history: Vec::new(),
            candidates: Vec::new(),
            candidate_pos: BTreeMap::new(),
            reported: BTreeSet::new(),
            feedback: BTreeMap::new(),
            embedding: None,
            clusters: None,
            relevancy: None,
            distributions: None,
            model_version: 0,
            retrained_at: None,
            warm_source: None,
        })
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    /// Number of batches run so far.
    pub fn batch_counter(&self) -> usize {
        self.batch_counter
    }

    pub fn model_version(&self) -> u64 {
        self.model_version
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn reported(&self) -> &BTreeSet<i64> {
        &self.reported
    }

    pub fn feedback_log(&self) -> Vec<FeedbackRecord> {
        self.feedback
            .iter()
            .map(|(&t, &label)| FeedbackRecord::new(self.series_id.clone(), t, label))
            .collect()
    }

    pub fn embedding(&self) -> Option<&EmbeddingModel> {
        self.embedding.as_ref()
    }

    pub fn clusters(&self) -> Option<&ClusterModel> {
        self.clusters.as_ref()
    }

    pub fn relevancy(&self) -> Option<&RelevancyVector> {
        self.relevancy.as_ref()
    }

    pub fn relevancy_snapshot(&self) -> Option<RelevancySnapshot> {
        let r = self.relevancy.clone()?;
        let d = self.distributions.as_ref()?;
        Some(RelevancySnapshot {
            r,
            d_c: d.d_c.clone(),
            d_plus: d.d_plus.clone(),
            d_minus: d.d_minus.clone(),
        })
    }

    /// True while the just-finished batch still collects feedback.
    pub fn feedback_open(&self) -> bool {
        self.batch_counter >= 1 && self.batch_counter <= self.config.feedback_batches
    }

    pub fn checkpoint(&self) -> Option<Checkpoint> {
        Some(Checkpoint {
            embedding: self.embedding.clone()?,
            clusters: self.clusters.clone()?,
            relevancy: self.relevancy.clone()?,
        })
    }

    /// Installs previously trained models; they are used from the next batch.
    pub fn restore(&mut self, checkpoint: Checkpoint) -> Result<()> {
        if checkpoint.relevancy.len() != checkpoint.clusters.k {
            return Err(Error::DimensionMismatch {
                expected: checkpoint.clusters.k,
                got: checkpoint.relevancy.len(),
            });
        }
        if checkpoint.clusters.dim() != checkpoint.embedding.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: checkpoint.embedding.feature_dim(),
                got: checkpoint.clusters.dim(),
            });
        }
        self.embedding = Some(checkpoint.embedding);
        self.clusters = Some(checkpoint.clusters);
        self.relevancy = Some(checkpoint.relevancy);
        self.distributions = None;
        self.model_version += 1;
        Ok(())
    }

    fn history_end(&self) -> i64 {
        self.history_start + self.history.len() as i64
    }

    /// Seed for the oracle that labels the most recent batch.
    pub fn oracle_seed(&self) -> u64 {
        derive_seed(self.config.seed ^ FEEDBACK_STREAM, self.batch_counter as u64)
    }

    /// Detects, adjusts and reports one batch. Models are not retrained here.
    pub fn run_batch(&mut self, slice: &TimeSeries, scores: &ScoreSeries) -> Result<BatchReport> {
        scores.check_aligned(slice)?;
        if slice.id() != self.series_id {
            return Err(Error::Misaligned(format!(
                "batch of series {} fed to the loop of {}",
                slice.id(),
                self.series_id
            )));
        }
        if self.history.is_empty() {
            self.history_start = slice.start_index();
        } else if slice.start_index() != self.history_end() {
            return Err(Error::Misaligned(format!(
                "batch starts at {}, expected {}",
                slice.start_index(),
                self.history_end()
            )));
        }
        self.history.extend_from_slice(slice.values());

        let thresholds = &self.config.thresholds;
        let cand_idx = candidate_indices(scores, thresholds);
        let detected: BTreeSet<i64> = detected_indices(scores, thresholds).into_iter().collect();
        let lo = (slice.start_index() - self.config.context.m as i64).max(self.history_start);
        let local = TimeSeries::new(
            self.series_id.clone(),
            lo,
            self.history[(lo - self.history_start) as usize..].to_vec(),
        )?;
        let windows = collect_contexts(&local, &cand_idx, &self.config.context);

        let adjust = self.batch_counter >= 1
            && !(self.batch_counter >= self.config.feedback_batches
                && self.config.after_feedback == AfterFeedback::ReportBase);
        let models = match (&self.embedding, &self.clusters, &self.relevancy) {
            (Some(e), Some(c), Some(r)) if adjust => Some((e, c, r)),
            _ => None,
        };

        let report = match models {
            None => BatchReport {
                batch_number: self.batch_counter + 1,
                batch: Batch::new(self.series_id.clone(), slice.start_index(), slice.end_index())?,
                reported_anomalies: detected
                    .iter()
                    .map(|&t| ReportedAnomaly {
                        time_index: t,
                        score: scores.score_at(t).unwrap_or(0.0),
                        cluster_id: None,
                    })
                    .collect(),
                relevancy_used: None,
                n_base: None,
                n_adj: None,
                model_version: self.model_version,
            },
            Some((embedding, clusters, r)) => {
                let mut scored = Vec::with_capacity(windows.len());
                for w in &windows {
                    let cluster_id = clusters.assign(&embedding.features(w)?)?;
                    scored.push(ScoredCandidate {
                        time_index: w.time_index,
                        score: scores.score_at(w.time_index).unwrap_or(0.0),
                        cluster_id,
                    });
                }
                let detected_assign: Vec<ClusterAssignment> = scored
                    .iter()
                    .filter(|c| detected.contains(&c.time_index))
                    .map(|c| ClusterAssignment {
                        time_index: c.time_index,
                        cluster_id: c.cluster_id,
                    })
                    .collect();
                let n_base = base_counts(&detected_assign, clusters.k)?;
                let n_adj = adjust_counts(&n_base, r)?;
                let chosen: BTreeSet<i64> = select_anomalies(&scored, &n_adj).into_iter().collect();
                BatchReport {
                    batch_number: self.batch_counter + 1,
                    batch: Batch::new(self.series_id.clone(), slice.start_index(), slice.end_index())?,
                    reported_anomalies: scored
                        .iter()
                        .filter(|c| chosen.contains(&c.time_index))
                        .map(|c| ReportedAnomaly {
                            time_index: c.time_index,
                            score: c.score,
                            cluster_id: Some(c.cluster_id),
                        })
                        .collect(),
                    relevancy_used: Some(r.clone()),
                    n_base: Some(n_base),
                    n_adj: Some(n_adj),
                    model_version: self.model_version,
                }
            }
        };

        for w in windows {
            self.candidate_pos.insert(w.time_index, self.candidates.len());
            self.candidates.push(Candidate {
                time_index: w.time_index,
                score: scores.score_at(w.time_index).unwrap_or(0.0),
                window: w,
            });
        }
        self.reported.extend(report.indices());
        self.batch_counter += 1;
        Ok(report)
    }

    /// Records labels. Every record must name a point reported earlier; a
    /// later label for the same point replaces the earlier one. Nothing is
    /// stored if any record is rejected.
    pub fn ingest_feedback(&mut self, records: &[FeedbackRecord]) -> Result<()> {
        for r in records {
            if r.series_id != self.series_id || !self.reported.contains(&r.time_index) {
                return Err(Error::UnreportedPoint {
                    series_id: r.series_id.clone(),
                    time_index: r.time_index,
                });
            }
        }
        for r in records {
            self.feedback.insert(r.time_index, r.label);
        }
        Ok(())
    }

    fn training_windows(&self) -> Vec<ContextWindow> {
        let cap = self.config.max_training_windows;
        if self.candidates.len() <= cap {
            return self.candidates.iter().map(|c| c.window.clone()).collect();
        }
        let labeled: Vec<usize> = self
            .feedback
            .keys()
            .filter_map(|t| self.candidate_pos.get(t).copied())
            .collect();
        let labeled_set: BTreeSet<usize> = labeled.iter().copied().collect();
        let rest: Vec<usize> = (0..self.candidates.len())
            .filter(|i| !labeled_set.contains(i))
            .collect();
        let room = cap.saturating_sub(labeled.len()).min(rest.len());
        let mut rng = seeded(derive_seed(
            self.config.seed ^ SUBSAMPLE_STREAM,
            self.batch_counter as u64,
        ));
        let mut picked: Vec<usize> = labeled;
        picked.extend(sample(&mut rng, rest.len(), room).into_iter().map(|i| rest[i]));
        picked.sort_unstable();
        picked.into_iter().map(|i| self.candidates[i].window.clone()).collect()
    }

    /// Retrains the embedding, clustering and relevancy vector on every
    /// candidate seen so far and all feedback collected so far.
    pub fn end_batch_retrain(&mut self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::NotEnoughData(format!(
                "series {}: no candidates to train on",
                self.series_id
            )));
        }
        if self.retrained_at != Some(self.batch_counter) {
            self.warm_source = self.embedding.clone();
            self.retrained_at = Some(self.batch_counter);
        }
        let mut emb_cfg = self.config.embedding.clone();
        emb_cfg.seed = derive_seed(self.config.seed, self.batch_counter as u64);
        let warm = if self.config.warm_start {
            self.warm_source.as_ref()
        } else {
            None
        };
        let (embedding, _) = train_autoencoder_with_report(&self.training_windows(), &emb_cfg, warm)?;

        let features = self
            .candidates
            .iter()
            .map(|c| embedding.features(&c.window))
            .collect::<Result<Vec<_>>>()?;
        let clusters = select_k(
            &features,
            derive_seed(self.config.seed ^ CLUSTER_STREAM, self.batch_counter as u64),
            &self.config.kmeans,
        )?;
        let labels = clusters.assign_all(&features)?;
        let assignments: Vec<ClusterAssignment> = self
            .candidates
            .iter()
            .zip(&labels)
            .map(|(c, &cluster_id)| ClusterAssignment {
                time_index: c.time_index,
                cluster_id,
            })
            .collect();
        let feedback: Vec<FeedbackAssignment> = self
            .feedback
            .iter()
            .filter_map(|(t, &label)| {
                self.candidate_pos.get(t).map(|&i| FeedbackAssignment {
                    time_index: *t,
                    cluster_id: labels[i],
                    label,
                })
            })
            .collect();
        let dist = cluster_distributions(&assignments, &feedback, clusters.k)?;
        let r = if feedback.is_empty() {
            RelevancyVector::ones(clusters.k)
        } else {
            relevancy(&dist, &self.config.relevancy)
        };
        self.embedding = Some(embedding);
        self.clusters = Some(clusters);
        self.relevancy = Some(r);
        self.distributions = Some(dist);
        self.model_version += 1;
        Ok(())
    }
}

impl LoopState {
    /// Closes the feedback window of the batch just run: retrains while
    /// feedback is still being collected, otherwise keeps the models frozen.
    pub fn close_batch(&mut self) -> Result<bool> {
        if self.feedback_open() && !self.candidates.is_empty() {
            self.end_batch_retrain()?;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Simulated user: samples without replacement up to `budget.positive`
/// reported points labeled anomalous and up to `budget.negative` labeled
/// normal. Records come back sorted by time index.
pub fn oracle_feedback<R: Rng>(
    report: &BatchReport,
    series: &TimeSeries,
    budget: FeedbackBudget,
    rng: &mut R,
) -> Result<Vec<FeedbackRecord>> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for a in &report.reported_anomalies {
        match series.label_at(a.time_index) {
            Some(true) => pos.push(a.time_index),
            Some(false) => neg.push(a.time_index),
            None => {
                return Err(Error::Misaligned(format!(
                    "no label for reported index {} of series {}",
                    a.time_index,
                    series.id()
                )))
            }
        }
    }
    let mut out = Vec::new();
    for (pool, n, label) in [(pos, budget.positive, Label::Positive), (neg, budget.negative, Label::Negative)] {
        let take = n.min(pool.len());
        for i in sample(rng, pool.len(), take) {
            out.push(FeedbackRecord::new(series.id(), pool[i], label));
        }
    }
    out.sort_by_key(|r| r.time_index);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> LoopConfig {
        LoopConfig {
            embedding: EmbeddingConfig {
                hidden_size: 4,
                epochs: 5,
                ..Default::default()
            },
            context: ContextConfig { m: 4 },
            ..Default::default()
        }
    }

    fn scored(id: &str, start: i64, scores: Vec<f64>) -> (TimeSeries, ScoreSeries) {
        let values = scores.iter().map(|s| s * 10.0).collect();
        (
            TimeSeries::new(id, start, values).unwrap(),
            ScoreSeries::new(id, start, scores).unwrap(),
        )
    }

    #[test]
    fn first_batch_reports_detections() {
        let mut st = LoopState::new("a", small_config()).unwrap();
        let (s, p) = scored("a", 0, vec![0.1, 0.995, 0.95, 0.999, 0.2]);
        let rep = st.run_batch(&s, &p).unwrap();
        assert_eq!(rep.indices(), vec![1, 3]);
        assert_eq!(rep.batch_number, 1);
        assert!(rep.relevancy_used.is_none());
        assert_eq!(st.candidates().len(), 3);
    }

    #[test]
    fn misaligned_batches_rejected() {
        let mut st = LoopState::new("a", small_config()).unwrap();
        let (s, p) = scored("a", 0, vec![0.1, 0.2]);
        st.run_batch(&s, &p).unwrap();
        let (s, p) = scored("a", 5, vec![0.1]);
        assert!(matches!(st.run_batch(&s, &p), Err(Error::Misaligned(_))));
        let (s, _) = scored("a", 2, vec![0.1, 0.2]);
        let (_, p) = scored("a", 2, vec![0.1]);
        assert!(st.run_batch(&s, &p).is_err());
    }

    #[test]
    fn feedback_rules() {
        let mut st = LoopState::new("a", small_config()).unwrap();
        let (s, p) = scored("a", 0, vec![0.1, 0.995, 0.95, 0.999, 0.2]);
        st.run_batch(&s, &p).unwrap();
        st.ingest_feedback(&[]).unwrap();
        assert!(st.feedback_log().is_empty());
        st.ingest_feedback(&[FeedbackRecord::new("a", 1, Label::Positive)]).unwrap();
        assert_eq!(st.feedback_log().len(), 1);
        st.ingest_feedback(&[FeedbackRecord::new("a", 1, Label::Negative)]).unwrap();
        assert_eq!(st.feedback_log()[0].label, Label::Negative);
        let err = st
            .ingest_feedback(&[
                FeedbackRecord::new("a", 3, Label::Positive),
                FeedbackRecord::new("a", 2, Label::Positive),
            ])
            .unwrap_err();
        assert!(matches!(err, Error::UnreportedPoint { time_index: 2, .. }));
        assert_eq!(st.feedback_log().len(), 1);
    }

    #[test]
    fn retrain_without_feedback_is_neutral_and_repeatable() {
        let mut st = LoopState::new("a", small_config()).unwrap();
        let scores: Vec<f64> = (0..60).map(|i| if i % 3 == 0 { 0.995 } else { 0.95 }).collect();
        let (s, p) = scored("a", 0, scores);
        st.run_batch(&s, &p).unwrap();
        st.end_batch_retrain().unwrap();
        let first = st.relevancy().unwrap().clone();
        assert!(first.is_neutral());
        let snapshot = st.checkpoint().unwrap();
        st.end_batch_retrain().unwrap();
        assert_eq!(st.checkpoint().unwrap(), snapshot);
        assert_eq!(st.model_version(), 2);
    }

    #[test]
    fn oracle_exhaustion_and_budget() {
        let labels = vec![true, true, true, false, false, false, false];
        let s = TimeSeries::with_labels("a", 0, vec![0.0; 7], labels).unwrap();
        let report = BatchReport {
            batch_number: 1,
            batch: Batch::new("a", 0, 7).unwrap(),
            reported_anomalies: (0..6)
                .map(|t| ReportedAnomaly {
                    time_index: t,
                    score: 0.999,
                    cluster_id: None,
                })
                .collect(),
            relevancy_used: None,
            n_base: None,
            n_adj: None,
            model_version: 0,
        };
        let fb = oracle_feedback(&report, &s, FeedbackBudget::default(), &mut seeded(1)).unwrap();
        assert_eq!(fb.len(), 6);
        assert_eq!(fb.iter().filter(|r| r.label == Label::Positive).count(), 3);
        let fb = oracle_feedback(
            &report,
            &s,
            FeedbackBudget {
                positive: 1,
                negative: 2,
            },
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(fb.len(), 3);
        let empty = BatchReport {
            reported_anomalies: vec![],
            ..report
        };
        assert!(oracle_feedback(&empty, &s, FeedbackBudget::default(), &mut seeded(1))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut st = LoopState::new("a", small_config()).unwrap();
        let scores: Vec<f64> = (0..40).map(|i| 0.9 + (i % 7) as f64 * 0.014).collect();
        let (s, p) = scored("a", 0, scores);
        st.run_batch(&s, &p).unwrap();
        st.end_batch_retrain().unwrap();
        let cp = st.checkpoint().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        cp.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), cp);
    }
}
