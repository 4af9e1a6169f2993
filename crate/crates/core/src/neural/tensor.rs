//! Dense row-major matrix type and the handful of GEMM kernels the
//! network forward/backward passes are built from.
//!
//! Everything is `f64`. Accumulation orders are fixed so repeated runs
//! produce bit-identical results regardless of thread count.

use serde::{Deserialize, Serialize};

/// Row-major 2-D tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor2 { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for i in 0..self.rows {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, b) in row.iter_mut().zip(bias) {
                *r += b;
            }
        }
    }

    /// Column sums, accumulated into `out` (length `cols`).
    pub fn col_sum_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
}

/// Dot product with four independent accumulators. The fixed
/// reassociation keeps results deterministic while letting the
/// compiler vectorize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += s * x` over contiguous slices.
#[inline]
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// `out = a * b^T` where `a` is (m x k) and `b` is (n x k); result (m x n).
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dims");
    let mut out = Tensor2::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for j in 0..b.rows {
            or[j] = dot(ar, b.row(j));
        }
    }
    out
}

/// `out += a * b^T` into an existing (m x n) tensor.
pub fn matmul_nt_acc(out: &mut Tensor2, a: &Tensor2, b: &Tensor2) {
    assert_eq!(a.cols, b.cols, "matmul_nt_acc inner dims");
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for j in 0..b.rows {
            or[j] += dot(ar, b.row(j));
        }
    }
}

/// `out = a * b` where `a` is (m x k) and `b` is (k x n); result (m x n).
pub fn matmul_nn(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(a.rows, b.cols);
    matmul_nn_acc(&mut out, a, b);
    out
}

/// `out += a * b`, i-k-j loop with contiguous axpy rows.
pub fn matmul_nn_acc(out: &mut Tensor2, a: &Tensor2, b: &Tensor2) {
    assert_eq!(a.cols, b.rows, "matmul_nn inner dims");
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.cols);
    let bc = b.cols;
    for i in 0..a.rows {
        let ar = a.row(i);
        let or = &mut out.data[i * bc..(i + 1) * bc];
        for (k, &aik) in ar.iter().enumerate() {
            if aik != 0.0 {
                axpy(or, aik, &b.data[k * bc..(k + 1) * bc]);
            }
        }
    }
}

/// `out += a^T * b` where `a` is (p x m) and `b` is (p x n); result (m x n).
pub fn matmul_tn_acc(out: &mut Tensor2, a: &Tensor2, b: &Tensor2) {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dims");
    assert_eq!(out.rows, a.cols);
    assert_eq!(out.cols, b.cols);
    let n = b.cols;
    for k in 0..a.rows {
        let ak = a.row(k);
        let bk = b.row(k);
        for (i, &aki) in ak.iter().enumerate() {
            if aki != 0.0 {
                axpy(&mut out.data[i * n..(i + 1) * n], aki, bk);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn naive_matmul(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(a: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                out.set(j, i, a.get(i, j));
            }
        }
        out
    }

    fn arange(rows: usize, cols: usize, scale: f64) -> Tensor2 {
        Tensor2::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| (i as f64 * 0.7 - 3.0) * scale).collect(),
        )
    }

    #[test]
    fn kernels_agree_with_naive_matmul() {
        let a = arange(5, 7, 0.3);
        let b = arange(7, 4, 0.2);
        let expect = naive_matmul(&a, &b);

        let nn = matmul_nn(&a, &b);
        let nt = matmul_nt(&a, &transpose(&b));
        let mut tn = Tensor2::zeros(a.rows(), b.cols());
        matmul_tn_acc(&mut tn, &transpose(&a), &b);
        let tn_expect = naive_matmul(&a, &b);

        for i in 0..expect.rows() {
            for j in 0..expect.cols() {
                assert_abs_diff_eq!(nn.get(i, j), expect.get(i, j), epsilon = 1e-12);
                assert_abs_diff_eq!(nt.get(i, j), expect.get(i, j), epsilon = 1e-12);
                assert_abs_diff_eq!(tn.get(i, j), tn_expect.get(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dot_matches_reference_sum() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.31 - 1.0).collect();
        let b: Vec<f64> = (0..13).map(|i| 2.0 - i as f64 * 0.17).collect();
        let reference: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_abs_diff_eq!(dot(&a, &b), reference, epsilon = 1e-12);
    }

    #[test]
    fn broadcast_and_col_sum() {
        let mut t = Tensor2::zeros(3, 2);
        t.add_row_broadcast(&[1.0, -2.0]);
        assert_eq!(t.row(2), &[1.0, -2.0]);
        let mut sums = vec![0.0; 2];
        t.col_sum_into(&mut sums);
        assert_eq!(sums, vec![3.0, -6.0]);
    }
}
