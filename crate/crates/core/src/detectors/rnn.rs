//! LSTM one-step forecaster with a Gaussian output head.
//!
//! The network reads the previous `context` normalized values and predicts a
//! mean and log-variance for the next one. The predictive variance is
//! `exp(log_var) + min_std²`, so a perfectly predictable series cannot drive
//! it to zero. Scores are the Gaussian tail probability of the residual.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::tail_score;
use crate::nn::{Lstm, Parameters};
use crate::rng::seeded;
use crate::series::{ScoreSeries, TimeSeries};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub hidden_size: usize,
    pub context: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Predictive standard deviation floor, in normalized units.
    pub min_std: f64,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            hidden_size: 20,
            context: 32,
            iterations: 400,
            batch_size: 32,
            learning_rate: 1e-2,
            clip_norm: 5.0,
            min_std: 0.05,
            seed: 0,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.context == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "hidden_size, context and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.min_std > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate, clip_norm and min_std must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterParams {
    pub lstm: Lstm,
    /// `[mean weights (H), log-variance weights (H)]`.
    pub head: Vec<f64>,
    /// `[mean bias, log-variance bias]`.
    pub head_bias: Vec<f64>,
}

impl Parameters for ForecasterParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.lstm.tensors();
        t.push(&self.head);
        t.push(&self.head_bias);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.lstm.tensors_mut();
        t.push(&mut self.head);
        t.push(&mut self.head_bias);
        t
    }
}

/// Predictive mean and variance for one context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub mean: f64,
    pub variance: f64,
}

impl ForecasterParams {
    pub fn init(hidden_size: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let lstm = Lstm::init(1, hidden_size, &mut rng);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let head = (0..2 * hidden_size)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            lstm,
            head,
            head_bias: vec![0.0; 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lstm: self.lstm.zeros_like(),
            head: vec![0.0; self.head.len()],
            head_bias: vec![0.0; 2],
        }
    }

    fn head_out(&self, h: &[f64]) -> (f64, f64) {
        let n = h.len();
        let mu = self.head_bias[0] + h.iter().zip(&self.head[..n]).map(|(a, b)| a * b).sum::<f64>();
        let lv = self.head_bias[1] + h.iter().zip(&self.head[n..]).map(|(a, b)| a * b).sum::<f64>();
        (mu, lv)
    }

    pub fn forecast(&self, context: &[f64], min_std: f64) -> Forecast {
        let tr = self.lstm.forward(context, context.len());
        let (mean, lv) = self.head_out(tr.final_hidden(self.lstm.hidden_size));
        Forecast {
            mean,
            variance: lv.exp() + min_std * min_std,
        }
    }

    /// Gaussian negative log-likelihood (without the `½ln 2π` constant) of
    /// `target` given `context`; accumulates `scale · ∂loss` into `grad`.
    pub fn nll(
        &self,
        context: &[f64],
        target: f64,
        min_std: f64,
        grad: Option<(&mut ForecasterParams, f64)>,
    ) -> f64 {
        let h = self.lstm.hidden_size;
        let steps = context.len();
        let tr = self.lstm.forward(context, steps);
        let hid = tr.final_hidden(h);
        let (mu, lv) = self.head_out(hid);
        let var = lv.exp() + min_std * min_std;
        let r = target - mu;
        let loss = 0.5 * (var.ln() + r * r / var);
        if let Some((g, scale)) = grad {
            let d_mu = -r / var * scale;
            let d_lv = 0.5 * (1.0 / var - r * r / (var * var)) * lv.exp() * scale;
            g.head_bias[0] += d_mu;
            g.head_bias[1] += d_lv;
            let mut d_hidden = vec![0.0; steps * h];
            let last = &mut d_hidden[(steps - 1) * h..];
            for j in 0..h {
                g.head[j] += d_mu * hid[j];
                g.head[h + j] += d_lv * hid[j];
                last[j] = d_mu * self.head[j] + d_lv * self.head[h + j];
            }
            self.lstm.backward(&tr, &d_hidden, &mut g.lstm, None);
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub config: RnnConfig,
    pub params: ForecasterParams,
    pub center: f64,
    pub scale: f64,
    /// Last `context` training values (raw), prepended when scoring.
    pub history: Vec<f64>,
    pub training_loss: f64,
}

pub fn fit_rnn(train: &TimeSeries, config: &RnnConfig) -> Result<RnnModel> {
    config.validate()?;
    let v = train.values();
    let c = config.context;
    if v.len() <= c {
        return Err(Error::NotEnoughData(format!(
            "RNN forecaster needs more than {c} points, series {} has {}",
            train.id(),
            v.len()
        )));
    }
    let n = v.len() as f64;
    let center = v.iter().sum::<f64>() / n;
    let scale = (v.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-8);
    let z: Vec<f64> = v.iter().map(|x| (x - center) / scale).collect();

    let mut params = ForecasterParams::init(config.hidden_size, config.seed);
    let mut grad = params.zeros_like();
    let mut rng = seeded(config.seed ^ 0xF0CA57);
    let targets = z.len() - c;
    let mut loss = f64::NAN;
    for it in 0..config.iterations {
        grad.fill_zero();
        let scale_b = 1.0 / config.batch_size as f64;
        let mut total = 0.0;
        for _ in 0..config.batch_size {
            let t = c + rng.random_range(0..targets);
            total += params.nll(&z[t - c..t], z[t], config.min_std, Some((&mut grad, scale_b)));
        }
        loss = total * scale_b;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::Diverged {
                stage: format!("RNN forecaster iteration {it}"),
                loss,
            });
        }
        grad.clip_norm(config.clip_norm);
        params.sgd_step(&grad, config.learning_rate);
    }
    Ok(RnnModel {
        config: config.clone(),
        params,
        center,
        scale,
        history: v[v.len() - c..].to_vec(),
        training_loss: loss,
    })
}

impl RnnModel {
    fn normalize(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    /// Scores `series` as the continuation of the training data.
    pub fn score(&self, series: &TimeSeries) -> Result<ScoreSeries> {
        let c = self.config.context;
        let mut buf: Vec<f64> = self.history.iter().map(|&x| self.normalize(x)).collect();
        buf.extend(series.values().iter().map(|&x| self.normalize(x)));
        let scores = (0..series.len())
            .map(|i| {
                let f = self.params.forecast(&buf[i..i + c], self.config.min_std);
                tail_score((buf[i + c] - f.mean) / f.variance.sqrt())
            })
            .collect();
        ScoreSeries::new(series.id(), series.start_index(), scores)
    }
}
