//! Monitor network: either an MLP over the flattened window or a
//! stacked LSTM with a dense head. Two output classes (safe, unsafe).
//!
//! Batches are row-major (B x window*channels); each sample lays out
//! its window time-major, all channels of step 0 first.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseGrad, DenseLayer};
use super::lstm::{LstmCache, LstmGrad, LstmLayer};
use super::tensor::Tensor2;
use super::NeuralError;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Dense stack over the flattened window.
    Mlp {
        channels: usize,
        window: usize,
        hidden: Vec<usize>,
    },
    /// Stacked LSTM over the window sequence, dense head on the final
    /// hidden state.
    Lstm {
        channels: usize,
        window: usize,
        hidden: Vec<usize>,
    },
}

impl Architecture {
    pub fn channels(&self) -> usize {
        match self {
            Architecture::Mlp { channels, .. } | Architecture::Lstm { channels, .. } => *channels,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Architecture::Mlp { window, .. } | Architecture::Lstm { window, .. } => *window,
        }
    }

    pub fn input_width(&self) -> usize {
        self.channels() * self.window()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub lstm: Vec<LstmLayer>,
    pub dense: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct GradStore {
    pub lstm: Vec<LstmGrad>,
    pub dense: Vec<DenseGrad>,
}

impl GradStore {
    pub fn zero(&mut self) {
        for g in &mut self.lstm {
            g.wx.fill(0.0);
            g.wh.fill(0.0);
            g.b.fill(0.0);
        }
        for g in &mut self.dense {
            g.w.fill(0.0);
            g.b.fill(0.0);
        }
    }

    /// Gradient slices in the fixed parameter order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.lstm {
            out.push(g.wx.data());
            out.push(g.wh.data());
            out.push(g.b.as_slice());
        }
        for g in &self.dense {
            out.push(g.w.data());
            out.push(g.b.as_slice());
        }
        out
    }
}

/// Activations cached by `forward_batch` for the backward pass.
pub struct ForwardCache {
    /// Per-step input slices, populated for LSTM architectures.
    xs: Vec<Tensor2>,
    lstm: Vec<LstmCache>,
    /// Input to each dense layer (first entry is the head input).
    dense_in: Vec<Tensor2>,
    /// Post-activation output of each dense layer.
    dense_out: Vec<Tensor2>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor2 {
        self.dense_out.last().expect("network has a head")
    }
}

impl Network {
    /// Builds a freshly initialized network. Layer tensors are filled
    /// in declaration order from a ChaCha8 stream seeded with `seed`,
    /// so equal seeds give bit-identical parameters.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lstm = Vec::new();
        let mut dense = Vec::new();
        match &arch {
            Architecture::Mlp { hidden, .. } => {
                let mut prev = arch.input_width();
                for &h in hidden {
                    dense.push(DenseLayer::init(prev, h, Activation::Relu, &mut rng));
                    prev = h;
                }
                dense.push(DenseLayer::init(prev, NUM_CLASSES, Activation::Identity, &mut rng));
            }
            Architecture::Lstm { channels, hidden, .. } => {
                let mut prev = *channels;
                for &h in hidden {
                    lstm.push(LstmLayer::init(prev, h, &mut rng));
                    prev = h;
                }
                dense.push(DenseLayer::init(prev, NUM_CLASSES, Activation::Identity, &mut rng));
            }
        }
        Network { arch, lstm, dense }
    }

    pub fn check_input(&self, batch: &Tensor2) -> Result<(), NeuralError> {
        let want = self.arch.input_width();
        if batch.cols() != want {
            return Err(NeuralError::ShapeMismatch {
                expected: want,
                got: batch.cols(),
            });
        }
        Ok(())
    }

    /// Splits the flattened batch into per-step (B x channels) slices.
    fn time_slices(&self, batch: &Tensor2) -> Vec<Tensor2> {
        let c = self.arch.channels();
        let t = self.arch.window();
        let rows = batch.rows();
        (0..t)
            .map(|step| {
                let mut out = Tensor2::zeros(rows, c);
                for r in 0..rows {
                    out.row_mut(r).copy_from_slice(&batch.row(r)[step * c..(step + 1) * c]);
                }
                out
            })
            .collect()
    }

    /// Forward pass over a batch; returns cached activations. The
    /// logits live in `cache.logits()`.
    pub fn forward_batch(&self, batch: &Tensor2) -> Result<ForwardCache, NeuralError> {
        self.check_input(batch)?;
        let mut cache = ForwardCache {
            xs: Vec::new(),
            lstm: Vec::new(),
            dense_in: Vec::new(),
            dense_out: Vec::new(),
        };
        let head_input = if self.lstm.is_empty() {
            batch.clone()
        } else {
            cache.xs = self.time_slices(batch);
            let mut inputs = &cache.xs;
            for layer in &self.lstm {
                let lc = layer.forward(inputs);
                cache.lstm.push(lc);
                inputs = &cache.lstm.last().unwrap().hidden;
            }
            cache
                .lstm
                .last()
                .unwrap()
                .hidden
                .last()
                .expect("window has at least one step")
                .clone()
        };
        let mut x = head_input;
        for layer in &self.dense {
            let y = layer.forward(&x);
            cache.dense_in.push(x);
            cache.dense_out.push(y.clone());
            x = y;
        }
        Ok(cache)
    }

    pub fn zero_grad(&self) -> GradStore {
        GradStore {
            lstm: self.lstm.iter().map(|l| l.zero_grad()).collect(),
            dense: self.dense.iter().map(|l| l.zero_grad()).collect(),
        }
    }

    /// Backward pass from `d_logits`. Accumulates into `grads`; when
    /// `want_input_grad` is set, also returns the gradient w.r.t. the
    /// flattened input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &Tensor2,
        grads: &mut GradStore,
        want_input_grad: bool,
    ) -> Option<Tensor2> {
        let mut d = d_logits.clone();
        for i in (0..self.dense.len()).rev() {
            d = self.dense[i].backward(&cache.dense_in[i], &cache.dense_out[i], &d, &mut grads.dense[i]);
        }
        if self.lstm.is_empty() {
            return want_input_grad.then_some(d);
        }
        let steps = self.arch.window();
        let batch = d.rows();
        // The head only sees the final hidden state of the top layer.
        let top = self.lstm.len() - 1;
        let mut d_hidden: Vec<Tensor2> = (0..steps)
            .map(|t| {
                if t == steps - 1 {
                    d.clone()
                } else {
                    Tensor2::zeros(batch, self.lstm[top].hidden_size)
                }
            })
            .collect();
        for l in (0..self.lstm.len()).rev() {
            let xs = if l == 0 { &cache.xs } else { &cache.lstm[l - 1].hidden };
            let dxs = self.lstm[l].backward(xs, &cache.lstm[l], &d_hidden, &mut grads.lstm[l]);
            d_hidden = dxs;
        }
        if !want_input_grad {
            return None;
        }
        let c = self.arch.channels();
        let rows = d_hidden[0].rows();
        let mut d_input = Tensor2::zeros(rows, steps * c);
        for (t, dx) in d_hidden.iter().enumerate() {
            for r in 0..rows {
                d_input.row_mut(r)[t * c..(t + 1) * c].copy_from_slice(dx.row(r));
            }
        }
        Some(d_input)
    }

    /// Parameter slices in the canonical order: per LSTM layer wx, wh,
    /// b; then per dense layer w, b. Gradient stores use the same
    /// order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.lstm {
            out.push(l.wx.data_mut());
            out.push(l.wh.data_mut());
            out.push(l.b.as_mut_slice());
        }
        for l in &mut self.dense {
            out.push(l.w.data_mut());
            out.push(l.b.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let lstm: usize = self
            .lstm
            .iter()
            .map(|l| l.wx.data().len() + l.wh.data().len() + l.b.len())
            .sum();
        let dense: usize = self.dense.iter().map(|l| l.w.data().len() + l.b.len()).sum();
        lstm + dense
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.lstm {
            out.extend_from_slice(l.wx.data());
            out.extend_from_slice(l.wh.data());
            out.extend_from_slice(&l.b);
        }
        for l in &self.dense {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        }
    }
}
