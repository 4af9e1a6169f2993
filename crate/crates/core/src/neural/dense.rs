//! Fully connected layer with manual forward and backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul_nn, matmul_nt, matmul_tn_acc, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Raw logits; softmax is applied by the loss / prediction code.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Weight matrix, (out x in).
    pub w: Tensor2,
    pub b: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub w: Tensor2,
    pub b: Vec<f64>,
}

impl DenseLayer {
    /// Uniform init in +/- sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn init<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut w = Tensor2::zeros(output, input);
        for v in w.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        DenseLayer {
            w,
            b: vec![0.0; output],
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            w: Tensor2::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }

    /// Returns post-activation output for a batch (B x in) -> (B x out).
    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut y = matmul_nt(x, &self.w);
        y.add_row_broadcast(&self.b);
        if self.activation == Activation::Relu {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        y
    }

    /// `d_out` is the gradient w.r.t. the post-activation output; `x` and
    /// `y` are the cached input and output. Accumulates parameter
    /// gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&self, x: &Tensor2, y: &Tensor2, d_out: &Tensor2, grad: &mut DenseGrad) -> Tensor2 {
        let dz = match self.activation {
            Activation::Identity => d_out.clone(),
            Activation::Relu => {
                let mut dz = d_out.clone();
                for (d, o) in dz.data_mut().iter_mut().zip(y.data()) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz
            }
        };
        matmul_tn_acc(&mut grad.w, &dz, x);
        dz.col_sum_into(&mut grad.b);
        matmul_nn(&dz, &self.w)
    }
}
