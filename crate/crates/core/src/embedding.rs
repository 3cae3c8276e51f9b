//! Context windows around candidate points and the sequence autoencoder that
//! embeds them.
//!
//! A context window holds the `m + 1` values `v_{t-m} … v_t` ending at a
//! candidate. Windows are normalized to zero mean and unit standard deviation
//! before they reach the network, so the embedding describes *shape*. The
//! level information is not thrown away: [`EmbeddingModel::features`] appends
//! the window mean and standard deviation, each z-scored over the training
//! corpus, to the learned embedding before clustering.
//!
//! The autoencoder:
//!
//! ```text
//! x ──► LSTM→ ─┐
//!              ├─ e = [h→_L ; h←_1]   (2·hidden_size)
//! x ──► LSTM← ─┘
//! e, e, …, e ──► LSTM→ ─┐
//!                       ├─ y_t = w·[d→_t ; d←_t] + b
//! e, e, …, e ──► LSTM← ─┘
//! loss = mean_t (y_t − x_t)²
//! ```

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{Lstm, LstmTrace, Parameters};
use crate::rng::seeded;
use crate::series::TimeSeries;
use crate::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    /// Look-back; windows hold `m + 1` values.
    pub m: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self { m: 4 }
    }
}

impl ContextConfig {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("context m must be at least 1".into()));
        }
        Ok(Self { m })
    }

    pub fn window_len(&self) -> usize {
        self.m + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub series_id: String,
    pub time_index: i64,
    pub values: Vec<f64>,
}

/// One window per candidate, in input order. Points before the start of
/// `series` are filled with its first value.
///
/// # Panics
///
/// If a candidate index lies outside `series`.
pub fn collect_contexts(
    series: &TimeSeries,
    candidate_idxs: &[i64],
    config: &ContextConfig,
) -> Vec<ContextWindow> {
    let values = series.values();
    candidate_idxs
        .iter()
        .map(|&t| {
            assert!(series.contains(t), "candidate {t} outside series {}", series.id());
            let end = (t - series.start_index()) as usize;
            let window = (0..=config.m)
                .map(|back| {
                    let pos = end as i64 - (config.m - back) as i64;
                    values[pos.max(0) as usize]
                })
                .collect();
            ContextWindow {
                series_id: series.id().to_string(),
                time_index: t,
                values: window,
            }
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero-mean, unit-std copy of a window (std floored at `1e-8`).
pub fn normalize_window(values: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(values);
    let std = std.max(STD_FLOOR);
    values.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            hidden_size: 20,
            epochs: 500,
            learning_rate: 1e-2,
            batch_size: 32,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::InvalidConfig("hidden_size must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Trainable tensors of the bi-directional recurrent autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub encoder_forward: Lstm,
    pub encoder_backward: Lstm,
    pub decoder_forward: Lstm,
    pub decoder_backward: Lstm,
    /// `2H` readout weights over `[forward; backward]` decoder states.
    pub readout: Vec<f64>,
    pub readout_bias: Vec<f64>,
}

impl Parameters for AutoencoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(10);
        for l in [
            &self.encoder_forward,
            &self.encoder_backward,
            &self.decoder_forward,
            &self.decoder_backward,
        ] {
            out.extend(l.tensors());
        }
        out.push(&self.readout);
        out.push(&self.readout_bias);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(10);
        out.extend(self.encoder_forward.tensors_mut());
        out.extend(self.encoder_backward.tensors_mut());
        out.extend(self.decoder_forward.tensors_mut());
        out.extend(self.decoder_backward.tensors_mut());
        out.push(&mut self.readout);
        out.push(&mut self.readout_bias);
        out
    }
}

struct Pass {
    enc_f: LstmTrace,
    enc_b: LstmTrace,
    dec_f: LstmTrace,
    dec_b: LstmTrace,
    output: Vec<f64>,
}

impl AutoencoderParams {
    pub fn init(hidden_size: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let h = hidden_size;
        let encoder_forward = Lstm::init(1, h, &mut rng);
        let encoder_backward = Lstm::init(1, h, &mut rng);
        let decoder_forward = Lstm::init(2 * h, h, &mut rng);
        let decoder_backward = Lstm::init(2 * h, h, &mut rng);
        let bound = 1.0 / ((2 * h) as f64).sqrt();
        let readout = (0..2 * h)
            .map(|_| rand::Rng::random_range(&mut rng, -bound..bound))
            .collect();
        Self {
            encoder_forward,
            encoder_backward,
            decoder_forward,
            decoder_backward,
            readout,
            readout_bias: vec![0.0],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder_forward.hidden_size
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder_forward: self.encoder_forward.zeros_like(),
            encoder_backward: self.encoder_backward.zeros_like(),
            decoder_forward: self.decoder_forward.zeros_like(),
            decoder_backward: self.decoder_backward.zeros_like(),
            readout: vec![0.0; self.readout.len()],
            readout_bias: vec![0.0],
        }
    }

    fn encode_traces(&self, x: &[f64]) -> (LstmTrace, LstmTrace, Vec<f64>) {
        let h = self.hidden_size();
        let steps = x.len();
        let reversed: Vec<f64> = x.iter().rev().copied().collect();
        let enc_f = self.encoder_forward.forward(x, steps);
        let enc_b = self.encoder_backward.forward(&reversed, steps);
        let mut code = Vec::with_capacity(2 * h);
        code.extend_from_slice(enc_f.final_hidden(h));
        code.extend_from_slice(enc_b.final_hidden(h));
        (enc_f, enc_b, code)
    }

    /// Embedding of an already-normalized window.
    pub fn encode_normalized(&self, x: &[f64]) -> Vec<f64> {
        self.encode_traces(x).2
    }

    fn run(&self, x: &[f64]) -> Pass {
        let h = self.hidden_size();
        let steps = x.len();
        let (enc_f, enc_b, code) = self.encode_traces(x);
        let repeated: Vec<f64> = (0..steps).flat_map(|_| code.iter().copied()).collect();
        let dec_f = self.decoder_forward.forward(&repeated, steps);
        let dec_b = self.decoder_backward.forward(&repeated, steps);
        let output = (0..steps)
            .map(|p| {
                let hf = dec_f.hidden_at(p, h);
                let hb = dec_b.hidden_at(steps - 1 - p, h);
                self.readout_bias[0]
                    + hf.iter().zip(&self.readout[..h]).map(|(a, w)| a * w).sum::<f64>()
                    + hb.iter().zip(&self.readout[h..]).map(|(a, w)| a * w).sum::<f64>()
            })
            .collect();
        Pass {
            enc_f,
            enc_b,
            dec_f,
            dec_b,
            output,
        }
    }

    /// Reconstruction of an already-normalized window.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.run(x).output
    }

    /// Mean squared reconstruction error of one normalized window. When
    /// `grad` is given, `scale ×` its gradient is accumulated there.
    pub fn window_loss(&self, x: &[f64], grad: Option<&mut AutoencoderParams>, scale: f64) -> f64 {
        let pass = self.run(x);
        let steps = x.len();
        let loss = pass
            .output
            .iter()
            .zip(x)
            .map(|(y, t)| (y - t).powi(2))
            .sum::<f64>()
            / steps as f64;
        if let Some(grad) = grad {
            self.backward(x, &pass, grad, scale);
        }
        loss
    }

    fn backward(&self, x: &[f64], pass: &Pass, grad: &mut AutoencoderParams, scale: f64) {
        let h = self.hidden_size();
        let steps = x.len();
        let mut d_dec_f = vec![0.0; steps * h];
        let mut d_dec_b = vec![0.0; steps * h];
        for p in 0..steps {
            let dy = scale * 2.0 * (pass.output[p] - x[p]) / steps as f64;
            let q = steps - 1 - p;
            grad.readout_bias[0] += dy;
            let hf = pass.dec_f.hidden_at(p, h);
            let hb = pass.dec_b.hidden_at(q, h);
            for j in 0..h {
                grad.readout[j] += dy * hf[j];
                grad.readout[h + j] += dy * hb[j];
                d_dec_f[p * h + j] = dy * self.readout[j];
                d_dec_b[q * h + j] = dy * self.readout[h + j];
            }
        }
        let mut d_rep_f = vec![0.0; steps * 2 * h];
        let mut d_rep_b = vec![0.0; steps * 2 * h];
        self.decoder_forward
            .backward(&pass.dec_f, &d_dec_f, &mut grad.decoder_forward, Some(&mut d_rep_f));
        self.decoder_backward
            .backward(&pass.dec_b, &d_dec_b, &mut grad.decoder_backward, Some(&mut d_rep_b));
        let mut d_code = vec![0.0; 2 * h];
        for t in 0..steps {
            for (j, d) in d_code.iter_mut().enumerate() {
                *d += d_rep_f[t * 2 * h + j] + d_rep_b[t * 2 * h + j];
            }
        }
        let mut d_enc_f = vec![0.0; steps * h];
        let mut d_enc_b = vec![0.0; steps * h];
        d_enc_f[(steps - 1) * h..].copy_from_slice(&d_code[..h]);
        d_enc_b[(steps - 1) * h..].copy_from_slice(&d_code[h..]);
        self.encoder_forward
            .backward(&pass.enc_f, &d_enc_f, &mut grad.encoder_forward, None);
        self.encoder_backward
            .backward(&pass.enc_b, &d_enc_b, &mut grad.encoder_backward, None);
    }

    /// Mean loss over normalized windows and its exact gradient.
    pub fn loss_and_gradient(&self, windows: &[Vec<f64>]) -> (f64, AutoencoderParams) {
        let mut grad = self.zeros_like();
        let scale = 1.0 / windows.len() as f64;
        let loss = windows
            .iter()
            .map(|w| self.window_loss(w, Some(&mut grad), scale))
            .sum::<f64>()
            * scale;
        (loss, grad)
    }

    pub fn mean_loss(&self, windows: &[Vec<f64>]) -> f64 {
        windows.iter().map(|w| self.window_loss(w, None, 0.0)).sum::<f64>() / windows.len() as f64
    }
}

/// Corpus statistics used to scale the clustering features: the two level
/// features are z-scored, and the embedding block is rescaled so that its
/// total variance over the training corpus equals that of the level block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub mean_center: f64,
    pub mean_scale: f64,
    pub std_center: f64,
    pub std_scale: f64,
    pub embedding_scale: f64,
}

impl LevelStats {
    fn from_windows(windows: &[&[f64]]) -> Self {
        let (means, stds): (Vec<f64>, Vec<f64>) = windows.iter().map(|w| mean_std(w)).unzip();
        let (mean_center, mean_scale) = mean_std(&means);
        let (std_center, std_scale) = mean_std(&stds);
        Self {
            mean_center,
            mean_scale: mean_scale.max(STD_FLOOR),
            std_center,
            std_scale: std_scale.max(STD_FLOOR),
            embedding_scale: 1.0,
        }
    }
}

fn embedding_spread(embeddings: &[Vec<f64>]) -> f64 {
    let n = embeddings.len() as f64;
    let dim = embeddings[0].len();
    let mut total = 0.0;
    for d in 0..dim {
        let mean = embeddings.iter().map(|e| e[d]).sum::<f64>() / n;
        total += embeddings.iter().map(|e| (e[d] - mean).powi(2)).sum::<f64>() / n;
    }
    // Level block total variance is 2 (two z-scored features).
    (total / 2.0).sqrt().max(STD_FLOOR)
}

/// A trained embedding function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub window_len: usize,
    pub params: AutoencoderParams,
    pub level_stats: LevelStats,
    pub seed: u64,
    pub training_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean per-window loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss over the whole corpus after the last update.
    pub final_loss: f64,
}

/// Trains the autoencoder from scratch. Deterministic given `config.seed`.
pub fn train_autoencoder(windows: &[ContextWindow], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    train_autoencoder_with_report(windows, config, None).map(|(m, _)| m)
}

/// Trains, optionally continuing from `warm_start`'s parameters.
pub fn train_autoencoder_with_report(
    windows: &[ContextWindow],
    config: &EmbeddingConfig,
    warm_start: Option<&EmbeddingModel>,
) -> Result<(EmbeddingModel, TrainingReport)> {
    config.validate()?;
    let first = windows
        .first()
        .ok_or_else(|| Error::NotEnoughData("autoencoder needs at least one window".into()))?;
    let window_len = first.values.len();
    if let Some(w) = windows.iter().find(|w| w.values.len() != window_len) {
        return Err(Error::DimensionMismatch {
            expected: window_len,
            got: w.values.len(),
        });
    }

    let mut params = match warm_start {
        Some(m) if m.window_len == window_len && m.params.hidden_size() == config.hidden_size => {
            m.params.clone()
        }
        _ => AutoencoderParams::init(config.hidden_size, config.seed),
    };
    let normalized: Vec<Vec<f64>> = windows.iter().map(|w| normalize_window(&w.values)).collect();
    let raw: Vec<&[f64]> = windows.iter().map(|w| w.values.as_slice()).collect();
    let level_stats = LevelStats::from_windows(&raw);

    let mut rng = seeded(config.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    let mut grad = params.zeros_like();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.fill_zero();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                total += params.window_loss(&normalized[i], Some(&mut grad), scale);
            }
            grad.clip_norm(config.clip_norm);
            params.sgd_step(&grad, config.learning_rate);
        }
        let loss = total / normalized.len() as f64;
        if !loss.is_finite() || !params.all_finite() {
            return Err(Error::Diverged {
                stage: format!("autoencoder epoch {epoch}"),
                loss,
            });
        }
        epoch_losses.push(loss);
    }
    let final_loss = params.mean_loss(&normalized);
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            stage: "autoencoder final evaluation".into(),
            loss: final_loss,
        });
    }
    let embeddings: Vec<Vec<f64>> = normalized.iter().map(|x| params.encode_normalized(x)).collect();
    let level_stats = LevelStats {
        embedding_scale: embedding_spread(&embeddings),
        ..level_stats
    };
    Ok((
        EmbeddingModel {
            window_len,
            params,
            level_stats,
            seed: config.seed,
            training_loss: final_loss,
        },
        TrainingReport {
            epoch_losses,
            final_loss,
        },
    ))
}

impl EmbeddingModel {
    pub fn hidden_size(&self) -> usize {
        self.params.hidden_size()
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.hidden_size()
    }

    /// Dimension of [`features`](Self::features): embedding plus two level features.
    pub fn feature_dim(&self) -> usize {
        self.embedding_dim() + 2
    }

    fn check_len(&self, window: &ContextWindow) -> Result<()> {
        if window.values.len() != self.window_len {
            return Err(Error::DimensionMismatch {
                expected: self.window_len,
                got: window.values.len(),
            });
        }
        Ok(())
    }

    /// The learned embedding: concatenated final encoder hidden states.
    pub fn encode(&self, window: &ContextWindow) -> Result<Vec<f64>> {
        self.check_len(window)?;
        Ok(self.params.encode_normalized(&normalize_window(&window.values)))
    }

    /// The clustering vector: scaled embedding, then z-scored window mean and std.
    pub fn features(&self, window: &ContextWindow) -> Result<Vec<f64>> {
        let s = &self.level_stats;
        let mut out = self.encode(window)?;
        out.iter_mut().for_each(|x| *x /= s.embedding_scale);
        let (mean, std) = mean_std(&window.values);
        out.push((mean - s.mean_center) / s.mean_scale);
        out.push((std - s.std_center) / s.std_scale);
        Ok(out)
    }

    /// Mean reconstruction error over `windows`.
    pub fn reconstruction_error(&self, windows: &[ContextWindow]) -> Result<f64> {
        let mut total = 0.0;
        for w in windows {
            self.check_len(w)?;
            total += self.params.window_loss(&normalize_window(&w.values), None, 0.0);
        }
        Ok(total / windows.len().max(1) as f64)
    }
}
