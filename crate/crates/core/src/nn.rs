//! Hand-written LSTM layer with backpropagation through time, plus the few
//! optimizer helpers shared by the autoencoder and the recurrent forecaster.
//!
//! Gate rows are laid out as `[input, forget, candidate, output]`, each block
//! `hidden_size` rows tall, over the concatenated `[x_t; h_{t-1}]` input.
//!
//! ```text
//! i = σ(W_i·[x;h] + b_i)    f = σ(W_f·[x;h] + b_f)
//! g = tanh(W_g·[x;h] + b_g) o = σ(W_o·[x;h] + b_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Flat views over every trainable tensor of a model, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for t in self.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
        }
    }

    /// `self -= lr * grad`.
    fn sgd_step(&mut self, grad: &Self, lr: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4H × (I + H)`, row-major.
    pub weights: Vec<f64>,
    /// `4H`.
    pub bias: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Lstm::backward`].
#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: usize,
    inputs: Vec<f64>,
    /// `(T + 1) × H`, row 0 is the zero initial state.
    hidden: Vec<f64>,
    cells: Vec<f64>,
    /// `T × 4H` post-activation gates.
    gates: Vec<f64>,
}

impl LstmTrace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Hidden state after step `t` (0-based).
    pub fn hidden_at(&self, t: usize, hidden_size: usize) -> &[f64] {
        &self.hidden[(t + 1) * hidden_size..(t + 2) * hidden_size]
    }

    pub fn final_hidden(&self, hidden_size: usize) -> &[f64] {
        &self.hidden[self.steps * hidden_size..(self.steps + 1) * hidden_size]
    }
}

impl Lstm {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            weights: vec![0.0; 4 * hidden_size * (input_size + hidden_size)],
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform `±1/√H` weights, forget-gate bias 1.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input_size, hidden_size);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        layer
            .weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        layer.bias[hidden_size..2 * hidden_size].fill(1.0);
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    fn cols(&self) -> usize {
        self.input_size + self.hidden_size
    }

    /// Runs `steps` steps over `inputs` (`steps × input_size`) from a zero state.
    pub fn forward(&self, inputs: &[f64], steps: usize) -> LstmTrace {
        let (n_in, h) = (self.input_size, self.hidden_size);
        debug_assert_eq!(inputs.len(), steps * n_in);
        let cols = self.cols();
        let mut hidden = vec![0.0; (steps + 1) * h];
        let mut cells = vec![0.0; (steps + 1) * h];
        let mut gates = vec![0.0; steps * 4 * h];
        let mut xh = vec![0.0; cols];
        for t in 0..steps {
            xh[..n_in].copy_from_slice(&inputs[t * n_in..(t + 1) * n_in]);
            xh[n_in..].copy_from_slice(&hidden[t * h..(t + 1) * h]);
            let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &self.weights[r * cols..(r + 1) * cols];
                *zr = self.bias[r] + row.iter().zip(&xh).map(|(w, x)| w * x).sum::<f64>();
            }
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                z[j] = i;
                z[h + j] = f;
                z[2 * h + j] = g;
                z[3 * h + j] = o;
                let c = f * cells[t * h + j] + i * g;
                cells[(t + 1) * h + j] = c;
                hidden[(t + 1) * h + j] = o * c.tanh();
            }
        }
        LstmTrace {
            steps,
            inputs: inputs.to_vec(),
            hidden,
            cells,
            gates,
        }
    }

    /// Backpropagates `d_hidden` (`T × H`, the loss gradient w.r.t. every
    /// emitted hidden state) through the recorded pass. Parameter gradients
    /// are accumulated into `grad`; input gradients (`T × I`) are written to
    /// `d_inputs` when given.
    pub fn backward(
        &self,
        trace: &LstmTrace,
        d_hidden: &[f64],
        grad: &mut Lstm,
        mut d_inputs: Option<&mut [f64]>,
    ) {
        let (n_in, h) = (self.input_size, self.hidden_size);
        let cols = self.cols();
        let steps = trace.steps;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        let mut xh = vec![0.0; cols];
        let mut dxh = vec![0.0; cols];
        for t in (0..steps).rev() {
            let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &trace.cells[t * h..(t + 1) * h];
            let c = &trace.cells[(t + 1) * h..(t + 2) * h];
            for j in 0..h {
                let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = d_hidden[t * h + j] + dh_next[j];
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh * og * (1.0 - tc * tc);
                da[j] = dc * gg * ig * (1.0 - ig);
                da[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
                da[2 * h + j] = dc * ig * (1.0 - gg * gg);
                da[3 * h + j] = dh * tc * og * (1.0 - og);
                dc_next[j] = dc * fg;
            }
            xh[..n_in].copy_from_slice(&trace.inputs[t * n_in..(t + 1) * n_in]);
            xh[n_in..].copy_from_slice(&trace.hidden[t * h..(t + 1) * h]);
            dxh.fill(0.0);
            for (r, &dar) in da.iter().enumerate() {
                if dar == 0.0 {
                    continue;
                }
                grad.bias[r] += dar;
                let row = r * cols;
                let gw = &mut grad.weights[row..row + cols];
                gw.iter_mut().zip(&xh).for_each(|(gw, x)| *gw += dar * x);
                let w = &self.weights[row..row + cols];
                dxh.iter_mut().zip(w).for_each(|(d, w)| *d += dar * w);
            }
            dh_next.copy_from_slice(&dxh[n_in..]);
            if let Some(dx) = d_inputs.as_deref_mut() {
                dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dxh[..n_in]);
            }
        }
    }
}

impl Parameters for Lstm {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}
