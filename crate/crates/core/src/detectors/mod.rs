//! Black-box detectors. Each is fitted once on a training split and then
//! scores later data as its continuation, emitting scores in `[0, 1)`.

mod file;
mod gaussian;
mod holt_winters;
mod iid;
mod rcf;
mod rnn;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::series::{ScoreSeries, TimeSeries};
use crate::Result;

pub use file::{load_scores, read_scores, FileScores};
pub use gaussian::tail_score;
pub use holt_winters::{
    fit_holt_winters, HoltWintersConfig, HoltWintersModel, HoltWintersState,
};
pub use iid::{fit_iid, IidModel};
pub use rcf::{average_path_length, fit_rcf, Node, RandomCutTree, RcfConfig, RcfModel};
pub use rnn::{fit_rnn, Forecast, ForecasterParams, RnnConfig, RnnModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Iid,
    HoltWinters,
    Rcf,
    Rnn,
    File,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::HoltWinters => "holt_winters",
            Self::Rcf => "rcf",
            Self::Rnn => "rnn",
            Self::File => "file",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Detector choice plus hyper-parameters, as written in config files:
/// `{"kind": "holt_winters", "season_length": 60}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Iid,
    HoltWinters(HoltWintersConfig),
    Rcf(RcfConfig),
    Rnn(RnnConfig),
    File { dir: PathBuf },
}

impl DetectorSpec {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Self::Iid => DetectorKind::Iid,
            Self::HoltWinters(_) => DetectorKind::HoltWinters,
            Self::Rcf(_) => DetectorKind::Rcf,
            Self::Rnn(_) => DetectorKind::Rnn,
            Self::File { .. } => DetectorKind::File,
        }
    }

    /// Default hyper-parameters for `kind`; `File` has no sensible default
    /// and points at `scores/`.
    pub fn default_for(kind: DetectorKind) -> Self {
        match kind {
            DetectorKind::Iid => Self::Iid,
            DetectorKind::HoltWinters => Self::HoltWinters(HoltWintersConfig::default()),
            DetectorKind::Rcf => Self::Rcf(RcfConfig::default()),
            DetectorKind::Rnn => Self::Rnn(RnnConfig::default()),
            DetectorKind::File => Self::File {
                dir: PathBuf::from("scores"),
            },
        }
    }

    /// Replaces the seed of stochastic detectors.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            Self::Rcf(c) => c.seed = seed,
            Self::Rnn(c) => c.seed = seed,
            _ => {}
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::HoltWinters(c) => c.validate(),
            Self::Rcf(c) => c.validate(),
            Self::Rnn(c) => c.validate(),
            Self::Iid | Self::File { .. } => Ok(()),
        }
    }

    pub fn fit(&self, train: &TimeSeries) -> Result<DetectorModel> {
        Ok(match self {
            Self::Iid => DetectorModel::Iid(fit_iid(train)?),
            Self::HoltWinters(c) => DetectorModel::HoltWinters(fit_holt_winters(train, c)?),
            Self::Rcf(c) => DetectorModel::Rcf(fit_rcf(train, c)?),
            Self::Rnn(c) => DetectorModel::Rnn(Box::new(fit_rnn(train, c)?)),
            Self::File { dir } => DetectorModel::File(FileScores { dir: dir.clone() }),
        })
    }
}

/// A fitted detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum DetectorModel {
    Iid(IidModel),
    HoltWinters(HoltWintersModel),
    Rcf(RcfModel),
    Rnn(Box<RnnModel>),
    File(FileScores),
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Self::Iid(_) => DetectorKind::Iid,
            Self::HoltWinters(_) => DetectorKind::HoltWinters,
            Self::Rcf(_) => DetectorKind::Rcf,
            Self::Rnn(_) => DetectorKind::Rnn,
            Self::File(_) => DetectorKind::File,
        }
    }

    /// Scores `series`. Stateful detectors treat it as the continuation of
    /// their training data and work on a private copy of their state.
    pub fn score(&self, series: &TimeSeries) -> Result<ScoreSeries> {
        match self {
            Self::Iid(m) => m.score(series),
            Self::HoltWinters(m) => m.score(series),
            Self::Rcf(m) => m.score(series),
            Self::Rnn(m) => m.score(series),
            Self::File(m) => m.score(series),
        }
    }
}
