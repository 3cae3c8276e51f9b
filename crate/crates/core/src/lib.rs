//! Human-in-the-loop relevancy feedback for black-box sequential anomaly
//! detectors.
//!
//! A base detector is only observed through its anomaly scores `p_i ∈ [0, 1)`.
//! This crate clusters the candidate anomalies of each batch by the shape of
//! their recent context, learns from a handful of positive/negative reviews
//! which clusters the user cares about, and rescales how many anomalies each
//! cluster is allowed to report in the next batch. Inside a cluster the base
//! detector's ranking is never changed.
//!
//! The pipeline, bottom to top:
//!
//! - [`series`]: series, scores, thresholds, batches and feedback records.
//! - [`datasets`]: the synthetic up/down spike benchmark and KPI CSV loading.
//! - [`detectors`]: the black-box contract plus IID, Holt-Winters, random cut
//!   forest, recurrent forecaster and file-backed scorers.
//! - [`embedding`]: context windows and the bi-directional LSTM autoencoder.
//! - [`clustering`]: K-means with silhouette selection of `k`.
//! - [`relevancy`]: cluster distributions, relevancy vector and per-cluster
//!   selection.
//! - [`hitl`]: the sequential batch loop and simulated feedback oracle.
//! - [`experiment`]: config documents, base-vs-HITL runs and metrics.
//!
//! ```
//! use hitl_core::relevancy::{relevancy, ClusterDistributions, RelevancyConfig};
//!
//! let dist = ClusterDistributions::new(
//!     vec![0.5, 0.5],
//!     vec![1.0, 0.0],
//!     vec![0.0, 1.0],
//! )
//! .unwrap();
//! let r = relevancy(&dist, &RelevancyConfig::default());
//! assert_eq!(r.values()[0], 2.0);
//! assert!((r.values()[1] - (-2.0f64).exp()).abs() < 1e-12);
//! ```

pub mod clustering;
pub mod datasets;
pub mod detectors;
pub mod embedding;
pub mod experiment;
pub mod hitl;
pub mod metrics;
pub mod nn;
pub mod relevancy;
mod rng;
pub mod series;

pub use rng::derive_seed;

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value or function argument is out of its valid range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// Not enough data to perform the requested operation.
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    /// The data cannot support a fitted model (e.g. zero variance).
    #[error("degenerate data: {0}")]
    Degenerate(String),
    /// Two inputs that must line up do not.
    #[error("misaligned input: {0}")]
    Misaligned(String),
    /// Vector dimensions do not match.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// A file row could not be parsed or validated.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    /// Gradient descent produced a non-finite loss.
    #[error("training diverged at {stage} (loss = {loss})")]
    Diverged { stage: String, loss: f64 },
    /// Feedback referenced a point that was never reported.
    #[error("series {series_id}: time index {time_index} was never reported")]
    UnreportedPoint { series_id: String, time_index: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

// The guide's code listings compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/series.md")]
    mod series {}
    #[doc = include_str!("../../../book/src/detectors.md")]
    mod detectors {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/relevancy.md")]
    mod relevancy {}
    #[doc = include_str!("../../../book/src/loop.md")]
    mod batch_loop {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
