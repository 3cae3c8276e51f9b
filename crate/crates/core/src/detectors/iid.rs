use serde::{Deserialize, Serialize};

use super::gaussian::tail_score;
use crate::series::{ScoreSeries, TimeSeries};
use crate::{Error, Result};

/// Sample mean and unbiased standard deviation of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidModel {
    pub mean: f64,
    pub std: f64,
}

pub fn fit_iid(train: &TimeSeries) -> Result<IidModel> {
    let v = train.values();
    if v.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "IID fit needs at least 2 points, series {} has {}",
            train.id(),
            v.len()
        )));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate(format!(
            "series {} has zero variance; the Gaussian is degenerate",
            train.id()
        )));
    }
    Ok(IidModel {
        mean,
        std: var.sqrt(),
    })
}

impl IidModel {
    pub fn score_value(&self, v: f64) -> f64 {
        // |v − μ| keeps the score exactly symmetric about the mean.
        tail_score((v - self.mean).abs() / self.std)
    }

    pub fn score(&self, series: &TimeSeries) -> Result<ScoreSeries> {
        let scores = series.values().iter().map(|&v| self.score_value(v)).collect();
        ScoreSeries::new(series.id(), series.start_index(), scores)
    }
}
