//! Base-only versus HITL experiments and the JSON documents around them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::clustering::KMeansConfig;
use crate::datasets::{generate_synthetic, load_kpi_csv, split_halves, KpiColumns, SyntheticConfig};
use crate::detectors::{DetectorKind, DetectorSpec};
use crate::embedding::{ContextConfig, EmbeddingConfig};
use crate::hitl::{oracle_feedback, AfterFeedback, BatchReport, FeedbackBudget, LoopConfig, LoopState};
use crate::metrics::{count_series, Counts, Evaluation, Metrics};
use crate::relevancy::RelevancyConfig;
use crate::rng::{derive_seed, seeded};
use crate::series::{detected_indices, Batch, ScoreSeries, Thresholds, TimeSeries};
use crate::{Error, Result};

const DETECTOR_STREAM: u64 = 0xDE7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    KpiCsv {
        path: PathBuf,
        #[serde(default)]
        columns: KpiColumns,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Synthetic(SyntheticConfig::default())
    }
}

impl DatasetSpec {
    /// Loads or generates the dataset. Synthetic data is regenerated per run
    /// seed so that seeds vary the data as well as the loop.
    pub fn load(&self, run_seed: u64) -> Result<Vec<TimeSeries>> {
        match self {
            Self::Synthetic(c) => {
                let mut c = c.clone();
                c.seed = derive_seed(c.seed, run_seed);
                generate_synthetic(&c)
            }
            Self::KpiCsv { path, columns } => load_kpi_csv(path, columns),
        }
    }
}

/// The experiment config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub detectors: Vec<DetectorSpec>,
    pub thresholds: Thresholds,
    /// Context length: each window holds `m + 1` values.
    pub m: usize,
    pub relevancy: RelevancyConfig,
    pub embedding: EmbeddingConfig,
    pub kmeans: KMeansConfig,
    pub batch_length: usize,
    pub budget: FeedbackBudget,
    pub feedback_batches: usize,
    pub max_training_windows: usize,
    pub warm_start: bool,
    pub after_feedback: AfterFeedback,
    pub evaluation: Evaluation,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let lc = LoopConfig::default();
        Self {
            dataset: DatasetSpec::default(),
            detectors: vec![DetectorSpec::Iid],
            thresholds: lc.thresholds,
            m: lc.context.m,
            relevancy: lc.relevancy,
            embedding: lc.embedding,
            kmeans: lc.kmeans,
            batch_length: 1500,
            budget: lc.budget,
            feedback_batches: lc.feedback_batches,
            max_training_windows: lc.max_training_windows,
            warm_start: lc.warm_start,
            after_feedback: lc.after_feedback,
            evaluation: Evaluation::default(),
            seeds: vec![0],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::InvalidConfig("detectors: at least one detector is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds: at least one seed is required".into()));
        }
        if self.batch_length == 0 {
            return Err(Error::InvalidConfig("batch_length must be positive".into()));
        }
        if let DatasetSpec::Synthetic(c) = &self.dataset {
            c.validate()?;
        }
        for d in &self.detectors {
            d.validate()?;
        }
        self.loop_config(0).validate()
    }

    /// Loop settings for one series; `seed` should already be series-specific.
    pub fn loop_config(&self, seed: u64) -> LoopConfig {
        LoopConfig {
            thresholds: self.thresholds,
            context: ContextConfig { m: self.m },
            relevancy: self.relevancy,
            embedding: self.embedding.clone(),
            kmeans: self.kmeans.clone(),
            budget: self.budget,
            feedback_batches: self.feedback_batches,
            max_training_windows: self.max_training_windows,
            warm_start: self.warm_start,
            after_feedback: self.after_feedback,
            seed,
        }
    }
}

/// The evaluated half of a series, scored once by a detector fitted on the
/// first half, and cut into batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    pub series: TimeSeries,
    pub scores: ScoreSeries,
    pub batches: Vec<Batch>,
}

impl PreparedSeries {
    pub fn batch(&self, i: usize) -> Result<(TimeSeries, ScoreSeries)> {
        let b = &self.batches[i];
        Ok((
            self.series.batch(b)?,
            self.scores.slice(b.start_index, b.end_index)?,
        ))
    }
}

pub fn prepare_series(
    full: &TimeSeries,
    detector: &DetectorSpec,
    batch_length: usize,
    seed: u64,
) -> Result<PreparedSeries> {
    let (train, test) = split_halves(full)?;
    let model = detector.clone().with_seed(seed).fit(&train)?;
    let scores = model.score(&test)?;
    let batches = test.batches(batch_length)?;
    Ok(PreparedSeries {
        series: test,
        scores,
        batches,
    })
}

/// Seeds used for series `index` of a run.
pub fn series_seeds(run_seed: u64, index: usize) -> (u64, u64) {
    (
        derive_seed(run_seed ^ DETECTOR_STREAM, index as u64),
        derive_seed(run_seed, index as u64),
    )
}

/// Runs the HITL loop over every batch, asking `feedback` for labels after
/// each batch that still collects them.
pub fn drive_series<F>(prep: &PreparedSeries, state: &mut LoopState, mut feedback: F) -> Result<Vec<BatchReport>>
where
    F: FnMut(&LoopState, &BatchReport) -> Result<Vec<crate::series::FeedbackRecord>>,
{
    let mut reports = Vec::with_capacity(prep.batches.len());
    for i in 0..prep.batches.len() {
        let (slice, scores) = prep.batch(i)?;
        let report = state.run_batch(&slice, &scores)?;
        if state.feedback_open() {
            let records = feedback(state, &report)?;
            state.ingest_feedback(&records)?;
        }
        state.close_batch()?;
        reports.push(report);
    }
    Ok(reports)
}

/// Oracle feedback drawn from the series labels with the state's own seed.
pub fn oracle_for(prep: &PreparedSeries, state: &LoopState, report: &BatchReport) -> Result<Vec<crate::series::FeedbackRecord>> {
    let mut rng = seeded(state.oracle_seed());
    oracle_feedback(report, &prep.series, state.config().budget, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub base_only: Metrics,
    pub with_hitl: Metrics,
    pub reports: Vec<BatchReport>,
}

/// Base-only and HITL metrics for one detector over `dataset`, micro-averaged
/// across series.
pub fn run_experiment(
    dataset: &[TimeSeries],
    detector: &DetectorSpec,
    config: &ExperimentConfig,
    run_seed: u64,
) -> Result<ExperimentOutcome> {
    let mut base = Counts::default();
    let mut hitl = Counts::default();
    let mut reports = Vec::new();
    for (i, full) in dataset.iter().enumerate() {
        let (det_seed, loop_seed) = series_seeds(run_seed, i);
        let prep = prepare_series(full, detector, config.batch_length, det_seed)?;
        let detected: BTreeSet<i64> = detected_indices(&prep.scores, &config.thresholds)
            .into_iter()
            .collect();
        base.add(count_series(&prep.series, &detected, config.evaluation)?);

        let mut state = LoopState::new(full.id(), config.loop_config(loop_seed))?;
        let series_reports = drive_series(&prep, &mut state, |st, rep| oracle_for(&prep, st, rep))?;
        let reported: BTreeSet<i64> = series_reports.iter().flat_map(|r| r.indices()).collect();
        hitl.add(count_series(&prep.series, &reported, config.evaluation)?);
        log::info!(
            "{} {}: base {} reports, hitl {} reports",
            detector.kind(),
            full.id(),
            detected.len(),
            reported.len()
        );
        reports.extend(series_reports);
    }
    Ok(ExperimentOutcome {
        base_only: base.metrics(),
        with_hitl: hitl.metrics(),
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Summary {
    fn mean(metrics: &[Metrics]) -> Self {
        let n = metrics.len().max(1) as f64;
        Self {
            precision: metrics.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: metrics.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: metrics.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub base_only: Metrics,
    pub with_hitl: Metrics,
    pub batches: Vec<BatchReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub base_only: Summary,
    pub with_hitl: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector: DetectorKind,
    /// Mean over seeds.
    pub mean: VariantSummary,
    pub runs: Vec<RunResult>,
}

/// The results document written by `hitl run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub config: ExperimentConfig,
    pub detectors: Vec<DetectorResult>,
}

/// Runs every configured detector for every seed.
pub fn run_config(config: &ExperimentConfig) -> Result<ResultsDocument> {
    config.validate()?;
    let mut per_detector: Vec<DetectorResult> = config
        .detectors
        .iter()
        .map(|d| DetectorResult {
            detector: d.kind(),
            mean: VariantSummary {
                base_only: Summary::mean(&[]),
                with_hitl: Summary::mean(&[]),
            },
            runs: Vec::new(),
        })
        .collect();
    let mut cached: Option<Vec<TimeSeries>> = None;
    for &seed in &config.seeds {
        let dataset = match (&config.dataset, &cached) {
            (DatasetSpec::KpiCsv { .. }, Some(d)) => d.clone(),
            _ => {
                let d = config.dataset.load(seed)?;
                cached = Some(d.clone());
                d
            }
        };
        for (d, out) in config.detectors.iter().zip(per_detector.iter_mut()) {
            let o = run_experiment(&dataset, d, config, seed)?;
            out.runs.push(RunResult {
                seed,
                base_only: o.base_only,
                with_hitl: o.with_hitl,
                batches: o.reports,
            });
        }
    }
    for d in &mut per_detector {
        let base: Vec<Metrics> = d.runs.iter().map(|r| r.base_only).collect();
        let hitl: Vec<Metrics> = d.runs.iter().map(|r| r.with_hitl).collect();
        d.mean = VariantSummary {
            base_only: Summary::mean(&base),
            with_hitl: Summary::mean(&hitl),
        };
    }
    Ok(ResultsDocument {
        config: config.clone(),
        detectors: per_detector,
    })
}

/// Plain-text table: one row per detector, F1/precision/recall for the base
/// detector and with feedback.
pub fn format_table(doc: &ResultsDocument) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}",
        "", "base", "", "", "hitl", "", ""
    );
    let _ = writeln!(
        s,
        "{:<14} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}",
        "detector", "F1", "P", "R", "F1", "P", "R"
    );
    for d in &doc.detectors {
        let (b, h) = (d.mean.base_only, d.mean.with_hitl);
        let _ = writeln!(
            s,
            "{:<14} {:>8.3} {:>8.3} {:>8.3}   {:>8.3} {:>8.3} {:>8.3}",
            d.detector.as_str(),
            b.f1,
            b.precision,
            b.recall,
            h.f1,
            h.precision,
            h.recall
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic(SyntheticConfig {
                num_series: 2,
                points_per_series: 2000,
                anomaly_rate: 0.005,
                ..Default::default()
            }),
            embedding: EmbeddingConfig {
                hidden_size: 4,
                epochs: 3,
                ..Default::default()
            },
            batch_length: 250,
            feedback_batches: 2,
            max_training_windows: 64,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.batch_length, 1500);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"batch_len": 3}"#).is_err());
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"kind": "kpi_csv", "path": "x.csv"}, "detectors": [{"kind": "iid"}, {"kind": "holt_winters"}]}"#,
        )
        .unwrap();
        assert_eq!(c.detectors.len(), 2);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dataset": {"kind": "kpi_csv"}}"#).is_err());
    }

    #[test]
    fn zero_budget_matches_base() {
        let mut c = tiny();
        c.budget = FeedbackBudget {
            positive: 0,
            negative: 0,
        };
        let data = c.dataset.load(0).unwrap();
        let o = run_experiment(&data, &DetectorSpec::Iid, &c, 0).unwrap();
        assert_eq!(o.base_only, o.with_hitl);
    }

    #[test]
    fn deterministic_results() {
        let mut c = tiny();
        c.detectors = vec![DetectorSpec::Iid];
        let a = serde_json::to_string(&run_config(&c).unwrap()).unwrap();
        let b = serde_json::to_string(&run_config(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        let doc: ResultsDocument = serde_json::from_str(&a).unwrap();
        assert!(format_table(&doc).contains("iid"));
    }
}
