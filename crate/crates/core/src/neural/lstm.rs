//! LSTM layer with packed gates and full backpropagation through time.
//!
//! Gate packing order inside the (4h)-wide dimension is `[i, f, g, o]`:
//! input, forget, candidate, output. Initial hidden and cell states are
//! zero; the forget-gate bias block starts at 1.0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul_nn_acc, matmul_nt, matmul_nt_acc, matmul_tn_acc, Tensor2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input weights, (4h x input).
    pub wx: Tensor2,
    /// Recurrent weights, (4h x h).
    pub wh: Tensor2,
    /// Gate biases, length 4h.
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrad {
    pub wx: Tensor2,
    pub wh: Tensor2,
    pub b: Vec<f64>,
}

/// Per-step activations cached by the forward pass.
pub struct LstmCache {
    /// Post-activation gates per step, (B x 4h).
    gates: Vec<Tensor2>,
    /// Cell states c_t per step, (B x h).
    cells: Vec<Tensor2>,
    /// tanh(c_t) per step.
    tanh_c: Vec<Tensor2>,
    /// Hidden states h_t per step.
    pub hidden: Vec<Tensor2>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmLayer {
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let gates = 4 * hidden_size;
        let limit_x = (6.0 / (input_size + gates) as f64).sqrt();
        let mut wx = Tensor2::zeros(gates, input_size);
        for v in wx.data_mut() {
            *v = rng.gen_range(-limit_x..limit_x);
        }
        let limit_h = (6.0 / (hidden_size + gates) as f64).sqrt();
        let mut wh = Tensor2::zeros(gates, hidden_size);
        for v in wh.data_mut() {
            *v = rng.gen_range(-limit_h..limit_h);
        }
        let mut b = vec![0.0; gates];
        b[hidden_size..2 * hidden_size].fill(1.0);
        LstmLayer {
            input_size,
            hidden_size,
            wx,
            wh,
            b,
        }
    }

    pub fn zero_grad(&self) -> LstmGrad {
        LstmGrad {
            wx: Tensor2::zeros(self.wx.rows(), self.wx.cols()),
            wh: Tensor2::zeros(self.wh.rows(), self.wh.cols()),
            b: vec![0.0; self.b.len()],
        }
    }

    /// Runs the layer over `xs` (one (B x input) tensor per step) and
    /// returns the cached activations for backward.
    pub fn forward(&self, xs: &[Tensor2]) -> LstmCache {
        let steps = xs.len();
        let batch = xs[0].rows();
        let h = self.hidden_size;
        let mut cache = LstmCache {
            gates: Vec::with_capacity(steps),
            cells: Vec::with_capacity(steps),
            tanh_c: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
        };
        let mut h_prev = Tensor2::zeros(batch, h);
        let mut c_prev = Tensor2::zeros(batch, h);
        for x_t in xs {
            let mut gates = matmul_nt(x_t, &self.wx);
            matmul_nt_acc(&mut gates, &h_prev, &self.wh);
            gates.add_row_broadcast(&self.b);

            let mut c_t = Tensor2::zeros(batch, h);
            let mut tanh_c = Tensor2::zeros(batch, h);
            let mut h_t = Tensor2::zeros(batch, h);
            for r in 0..batch {
                let g = gates.row_mut(r);
                for j in 0..h {
                    g[j] = sigmoid(g[j]);
                    g[h + j] = sigmoid(g[h + j]);
                    g[2 * h + j] = g[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(g[3 * h + j]);
                }
                let cp = c_prev.row(r);
                let ct = c_t.row_mut(r);
                for j in 0..h {
                    ct[j] = g[h + j] * cp[j] + g[j] * g[2 * h + j];
                }
                let tc = tanh_c.row_mut(r);
                let ht = h_t.row_mut(r);
                for j in 0..h {
                    tc[j] = ct[j].tanh();
                    ht[j] = g[3 * h + j] * tc[j];
                }
            }
            cache.gates.push(gates);
            cache.cells.push(c_t.clone());
            cache.tanh_c.push(tanh_c);
            cache.hidden.push(h_t.clone());
            h_prev = h_t;
            c_prev = c_t;
        }
        cache
    }

    /// Full BPTT. `d_hidden[t]` is the external gradient flowing into
    /// h_t (from the layer above or the head); the recurrent path is
    /// added internally. Accumulates parameter gradients and returns
    /// the gradients w.r.t. each step input.
    pub fn backward(
        &self,
        xs: &[Tensor2],
        cache: &LstmCache,
        d_hidden: &[Tensor2],
        grad: &mut LstmGrad,
    ) -> Vec<Tensor2> {
        let steps = xs.len();
        let batch = xs[0].rows();
        let h = self.hidden_size;
        let mut dxs = vec![Tensor2::zeros(batch, self.input_size); steps];
        let mut dh_rec = Tensor2::zeros(batch, h);
        let mut dc_rec = Tensor2::zeros(batch, h);
        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let tanh_c = &cache.tanh_c[t];
            let mut d_gates = Tensor2::zeros(batch, 4 * h);
            for r in 0..batch {
                let g = gates.row(r);
                let tc = tanh_c.row(r);
                let dh_ext = d_hidden[t].row(r);
                let dh_r = dh_rec.row(r);
                let dc_r = dc_rec.row_mut(r);
                let dg = d_gates.row_mut(r);
                for j in 0..h {
                    let i_g = g[j];
                    let f_g = g[h + j];
                    let g_g = g[2 * h + j];
                    let o_g = g[3 * h + j];
                    let dh = dh_ext[j] + dh_r[j];
                    let dc = dc_r[j] + dh * o_g * (1.0 - tc[j] * tc[j]);
                    let c_prev = if t == 0 { 0.0 } else { cache.cells[t - 1].get(r, j) };
                    dg[j] = dc * g_g * i_g * (1.0 - i_g);
                    dg[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                    dg[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dg[3 * h + j] = dh * tc[j] * o_g * (1.0 - o_g);
                    // Stash dc * f for the next (earlier) step.
                    dc_r[j] = dc * f_g;
                }
            }
            matmul_tn_acc(&mut grad.wx, &d_gates, &xs[t]);
            if t > 0 {
                matmul_tn_acc(&mut grad.wh, &d_gates, &cache.hidden[t - 1]);
            }
            d_gates.col_sum_into(&mut grad.b);
            matmul_nn_acc(&mut dxs[t], &d_gates, &self.wx);
            dh_rec.fill(0.0);
            matmul_nn_acc(&mut dh_rec, &d_gates, &self.wh);
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = LstmLayer::init(4, 3, &mut rng);
        assert_eq!(&layer.b[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(&layer.b[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&layer.b[6..], &[0.0; 6]);
    }

    #[test]
    fn zero_input_zero_state_gives_tanh_of_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = LstmLayer::init(2, 2, &mut rng);
        let xs = vec![Tensor2::zeros(1, 2)];
        let cache = layer.forward(&xs);
        // With zero input and zero initial state: i = sigmoid(0) = 0.5,
        // g = tanh(0) = 0, so c_1 = 0 and h_1 = 0.
        assert_eq!(cache.hidden[0].data(), &[0.0, 0.0]);
    }
}
