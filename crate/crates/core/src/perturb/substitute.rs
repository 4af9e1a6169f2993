//! Black-box attack through a substitute model. The attacker only
//! queries the target's predictions: a small dense network is fitted
//! to those predicted labels, the white-box attack runs against the
//! substitute, and the perturbed inputs transfer to the target.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::monitors::model::features_tensor;
use crate::monitors::{
    Dataset, MonitorError, MonitorVerdict, WindowSample, CHANNEL_NAMES, NUM_CHANNELS,
};
use crate::neural::{
    softmax_rows, weighted_ce_with_semantics, Adam, AdamConfig, Architecture, Network, UNSAFE,
};

use super::fgsm::{fgsm_on_network, FgsmSpec};
use super::PerturbError;

/// Query access to the target: a prediction function and nothing
/// else. The attack never sees weights, gradients, or architecture.
pub type PredictFn<'a> = dyn Fn(&[WindowSample]) -> Result<Vec<MonitorVerdict>, MonitorError> + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstituteSpec {
    /// Substitute topology: two dense hidden layers.
    pub hidden: Vec<usize>,
    /// Upper bound on the samples queried for substitute training.
    pub query_budget: usize,
    /// Step budget handed to the white-box attack on the substitute.
    pub epsilon: f64,
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl SubstituteSpec {
    pub fn new(query_budget: usize, epsilon: f64, seed: u64) -> Self {
        SubstituteSpec {
            hidden: vec![128, 64],
            query_budget,
            epsilon,
            seed,
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.001,
        }
    }

    fn validate(&self) -> Result<(), PerturbError> {
        let bad = |reason: String| Err(PerturbError::BadSpec { reason });
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return bad(format!("bad substitute hidden sizes {:?}", self.hidden));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// What the black-box attack produced, plus the evidence needed to
/// judge it: held-out agreement with the target and the query count.
#[derive(Debug, Clone)]
pub struct BlackboxOutcome {
    /// The attacked test split, for evaluation against the target.
    pub perturbed: Vec<WindowSample>,
    /// Signed step per sample, from the substitute's gradients.
    pub deltas: Vec<Vec<f64>>,
    /// Label agreement between substitute and target on the
    /// validation split, which substitute training never saw.
    pub agreement: f64,
    pub queries_used: usize,
    pub substitute: Network,
}

/// Trains the substitute on the target's predicted labels over the
/// training split, measures agreement on the validation split, and
/// attacks the test split with white-box FGSM on the substitute.
pub fn fgsm_blackbox(
    predict: &PredictFn,
    dataset: &Dataset,
    spec: &SubstituteSpec,
) -> Result<BlackboxOutcome, PerturbError> {
    spec.validate()?;
    let need = dataset.train.len();
    if spec.query_budget < need {
        return Err(PerturbError::QueryBudget { budget: spec.query_budget, need });
    }
    if need == 0 {
        return Err(PerturbError::Monitor(MonitorError::EmptyCorpus));
    }

    let queried: Vec<u8> = predict(&dataset.train)?
        .iter()
        .map(|v| v.predicted_unsafe() as u8)
        .collect();
    let mut queries_used = dataset.train.len();

    let arch = Architecture::Mlp {
        channels: NUM_CHANNELS,
        window: dataset.spec.window_len,
        hidden: spec.hidden.clone(),
    };
    let mut network = Network::new(arch, spec.seed);
    let mut adam = Adam::new(AdamConfig { lr: spec.learning_rate, ..AdamConfig::default() });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut grads = network.zero_grad();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut shuffle_rng);
        for (step, batch_idx) in order.chunks(spec.batch_size).enumerate() {
            let batch: Vec<WindowSample> =
                batch_idx.iter().map(|&i| dataset.train[i].clone()).collect();
            let labels: Vec<u8> = batch_idx.iter().map(|&i| queried[i]).collect();
            let x = features_tensor(&dataset.spec, &batch)?;
            let cache = network.forward_batch(&x).map_err(MonitorError::from)?;
            let out = weighted_ce_with_semantics(cache.logits(), &labels, [1.0, 1.0], None);
            if !out.loss.is_finite() {
                return Err(PerturbError::SubstituteDiverged { epoch: epoch as usize, step });
            }
            grads.zero();
            network.backward(&cache, &out.d_logits, &mut grads, false);
            let grad_slices = grads.slices();
            let mut params = network.param_slices_mut();
            adam.step(&mut params, &grad_slices);
        }
    }

    let agreement = if dataset.val.is_empty() {
        0.0
    } else {
        let target: Vec<bool> =
            predict(&dataset.val)?.iter().map(|v| v.predicted_unsafe()).collect();
        queries_used += dataset.val.len();
        let mine = substitute_predict(&network, dataset)?;
        let same = target.iter().zip(&mine).filter(|(a, b)| a == b).count();
        same as f64 / target.len() as f64
    };

    let attack = FgsmSpec {
        epsilon: spec.epsilon,
        target_channels: CHANNEL_NAMES.iter().map(|c| c.to_string()).collect(),
    };
    let (perturbed, deltas) =
        fgsm_on_network(&network, &dataset.spec, &dataset.stats, &dataset.test, &attack)?;
    Ok(BlackboxOutcome { perturbed, deltas, agreement, queries_used, substitute: network })
}

fn substitute_predict(network: &Network, dataset: &Dataset) -> Result<Vec<bool>, PerturbError> {
    let mut out = Vec::with_capacity(dataset.val.len());
    for chunk in dataset.val.chunks(256) {
        let x = features_tensor(&dataset.spec, chunk)?;
        let cache = network.forward_batch(&x).map_err(MonitorError::from)?;
        let probs = softmax_rows(cache.logits());
        for r in 0..probs.rows() {
            out.push(probs.row(r)[UNSAFE] >= 0.5);
        }
    }
    Ok(out)
}
