//! Central finite-difference oracle for parameter and input
//! gradients. Used by the test suite to certify the manual backward
//! passes.

use super::loss::weighted_ce_with_semantics;
use super::network::{GradStore, Network};
use super::tensor::Tensor2;
use super::NeuralError;

pub const FD_STEP: f64 = 1e-5;
const ABS_TOL: f64 = 1e-8;
const REL_TOL: f64 = 1e-4;

/// Full loss plus parameter gradients; optionally the gradient w.r.t.
/// the flattened input batch.
pub fn loss_and_grads(
    net: &Network,
    batch: &Tensor2,
    labels: &[u8],
    class_weights: [f64; 2],
    semantic: Option<(f64, &[f64])>,
    want_input_grad: bool,
) -> Result<(f64, GradStore, Option<Tensor2>), NeuralError> {
    let cache = net.forward_batch(batch)?;
    let out = weighted_ce_with_semantics(cache.logits(), labels, class_weights, semantic);
    let mut grads = net.zero_grad();
    let d_input = net.backward(&cache, &out.d_logits, &mut grads, want_input_grad);
    Ok((out.loss, grads, d_input))
}

fn loss_only(
    net: &Network,
    batch: &Tensor2,
    labels: &[u8],
    class_weights: [f64; 2],
    semantic: Option<(f64, &[f64])>,
) -> f64 {
    let cache = net.forward_batch(batch).expect("shape already validated");
    weighted_ce_with_semantics(cache.logits(), labels, class_weights, semantic).loss
}

/// Outcome of comparing analytic gradients against central
/// differences. A coordinate passes when the absolute difference is
/// below 1e-8 or the relative error is below 1e-4.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            checked: 0,
            failures: 0,
            worst_rel: 0.0,
            worst_abs: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, fd: f64) {
        let abs = (analytic - fd).abs();
        let denom = analytic.abs().max(fd.abs());
        let rel = if denom > 0.0 { abs / denom } else { 0.0 };
        self.checked += 1;
        if abs > self.worst_abs {
            self.worst_abs = abs;
        }
        if abs > ABS_TOL {
            if rel > self.worst_rel {
                self.worst_rel = rel;
            }
            if rel >= REL_TOL {
                self.failures += 1;
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks analytic parameter gradients at the flat coordinates in
/// `coords` (all coordinates when empty).
pub fn check_param_gradients(
    net: &Network,
    batch: &Tensor2,
    labels: &[u8],
    class_weights: [f64; 2],
    semantic: Option<(f64, &[f64])>,
    coords: &[usize],
) -> GradCheck {
    let (_, grads, _) = loss_and_grads(net, batch, labels, class_weights, semantic, false)
        .expect("gradcheck input shape");
    let mut analytic_flat = Vec::with_capacity(net.param_count());
    for s in grads.slices() {
        analytic_flat.extend_from_slice(s);
    }
    let base = net.params_flat();
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..base.len()).collect();
        &all
    } else {
        coords
    };
    let mut check = GradCheck::new();
    let mut probe = net.clone();
    let mut flat = base.clone();
    for &c in coords {
        flat[c] = base[c] + FD_STEP;
        probe.set_params_flat(&flat);
        let plus = loss_only(&probe, batch, labels, class_weights, semantic);
        flat[c] = base[c] - FD_STEP;
        probe.set_params_flat(&flat);
        let minus = loss_only(&probe, batch, labels, class_weights, semantic);
        flat[c] = base[c];
        check.record(analytic_flat[c], (plus - minus) / (2.0 * FD_STEP));
    }
    check
}

/// Checks the input gradient at the flat (row-major) batch
/// coordinates in `coords` (all when empty).
pub fn check_input_gradients(
    net: &Network,
    batch: &Tensor2,
    labels: &[u8],
    class_weights: [f64; 2],
    semantic: Option<(f64, &[f64])>,
    coords: &[usize],
) -> GradCheck {
    let (_, _, d_input) = loss_and_grads(net, batch, labels, class_weights, semantic, true)
        .expect("gradcheck input shape");
    let d_input = d_input.expect("input grad requested");
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..batch.rows() * batch.cols()).collect();
        &all
    } else {
        coords
    };
    let mut check = GradCheck::new();
    let mut probe = batch.clone();
    for &c in coords {
        let base = batch.data()[c];
        probe.data_mut()[c] = base + FD_STEP;
        let plus = loss_only(net, &probe, labels, class_weights, semantic);
        probe.data_mut()[c] = base - FD_STEP;
        let minus = loss_only(net, &probe, labels, class_weights, semantic);
        probe.data_mut()[c] = base;
        check.record(d_input.data()[c], (plus - minus) / (2.0 * FD_STEP));
    }
    check
}
