//! Additive Holt-Winters with fixed smoothing constants.
//!
//! ```text
//! ŷ_t = l_{t-1} + b_{t-1} + s_{t-m}
//! l_t = α (y_t − s_{t-m}) + (1 − α)(l_{t-1} + b_{t-1})
//! b_t = β (l_t − l_{t-1}) + (1 − β) b_{t-1}
//! s_t = γ (y_t − l_t) + (1 − γ) s_{t-m}
//! ```

use serde::{Deserialize, Serialize};

use super::gaussian::tail_score;
use crate::series::{ScoreSeries, TimeSeries};
use crate::{Error, Result};

const RESIDUAL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoltWintersConfig {
    pub season_length: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for HoltWintersConfig {
    fn default() -> Self {
        Self {
            season_length: 24,
            alpha: 0.2,
            beta: 0.05,
            gamma: 0.1,
        }
    }
}

impl HoltWintersConfig {
    pub fn validate(&self) -> Result<()> {
        if self.season_length == 0 {
            return Err(Error::InvalidConfig("season_length must be positive".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Smoothing state positioned just after the last observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoltWintersState {
    pub level: f64,
    pub trend: f64,
    pub seasonal: Vec<f64>,
    /// Index into `seasonal` for the next observation.
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoltWintersModel {
    pub config: HoltWintersConfig,
    pub state: HoltWintersState,
    /// Residual standard deviation of one-step-ahead in-sample errors.
    pub residual_std: f64,
}

impl HoltWintersState {
    pub fn forecast(&self) -> f64 {
        self.level + self.trend + self.seasonal[self.phase]
    }

    pub fn update(&mut self, y: f64, cfg: &HoltWintersConfig) {
        let s_old = self.seasonal[self.phase];
        let prev_level = self.level;
        self.level = cfg.alpha * (y - s_old) + (1.0 - cfg.alpha) * (self.level + self.trend);
        self.trend = cfg.beta * (self.level - prev_level) + (1.0 - cfg.beta) * self.trend;
        self.seasonal[self.phase] = cfg.gamma * (y - self.level) + (1.0 - cfg.gamma) * s_old;
        self.phase = (self.phase + 1) % self.seasonal.len();
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn fit_holt_winters(train: &TimeSeries, config: &HoltWintersConfig) -> Result<HoltWintersModel> {
    config.validate()?;
    let s = config.season_length;
    let y = train.values();
    if y.len() < 2 * s {
        return Err(Error::NotEnoughData(format!(
            "Holt-Winters needs at least 2 × season_length = {} points, series {} has {}",
            2 * s,
            train.id(),
            y.len()
        )));
    }
    let first = mean(&y[..s]);
    let second = mean(&y[s..2 * s]);
    let trend = (second - first) / s as f64;
    // Level at the end of the first season.
    let level = first + trend * (s as f64 - 1.0) / 2.0;
    let seasonal = (0..s)
        .map(|i| y[i] - (first + trend * (i as f64 - (s as f64 - 1.0) / 2.0)))
        .collect();
    let mut state = HoltWintersState {
        level,
        trend,
        seasonal,
        phase: 0,
    };
    let mut sq = 0.0;
    for &obs in &y[s..] {
        let e = obs - state.forecast();
        sq += e * e;
        state.update(obs, config);
    }
    let residual_std = (sq / (y.len() - s) as f64).sqrt().max(RESIDUAL_FLOOR);
    Ok(HoltWintersModel {
        config: config.clone(),
        state,
        residual_std,
    })
}

impl HoltWintersModel {
    /// Scores `series` as the continuation of the training data, updating a
    /// copy of the state after each observation.
    pub fn score(&self, series: &TimeSeries) -> Result<ScoreSeries> {
        let mut state = self.state.clone();
        let scores = series
            .values()
            .iter()
            .map(|&y| {
                let p = tail_score((y - state.forecast()) / self.residual_std);
                state.update(y, &self.config);
                p
            })
            .collect();
        ScoreSeries::new(series.id(), series.start_index(), scores)
    }

    /// One-step-ahead forecast errors over `series` (continuation semantics).
    pub fn forecast_errors(&self, series: &TimeSeries) -> Vec<f64> {
        let mut state = self.state.clone();
        series
            .values()
            .iter()
            .map(|&y| {
                let e = y - state.forecast();
                state.update(y, &self.config);
                e
            })
            .collect()
    }
}
