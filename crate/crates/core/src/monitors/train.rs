//! Deterministic single-threaded monitor training.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::neural::{weighted_ce_with_semantics, Adam, AdamConfig, Network, NeuralError, UNSAFE};

use super::dataset::{Dataset, SplitId, WindowSample};
use super::model::{features_tensor, MonitorModel, TrainSettings};
use super::MonitorError;

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: u32,
    pub mean_loss: f64,
    pub val_f1: f64,
}

/// Trains a monitor from scratch on the dataset's training split.
/// The semantic penalty is active whenever `settings.semantic_weight`
/// is nonzero; at zero the loss path is exactly the baseline one.
pub fn train_monitor(
    dataset: &Dataset,
    settings: &TrainSettings,
    name: &str,
) -> Result<(MonitorModel, Vec<EpochRow>), MonitorError> {
    settings.validate()?;
    dataset.spec.validate()?;
    let train: Vec<&WindowSample> = dataset.train.iter().step_by(settings.train_stride).collect();
    if train.is_empty() {
        return Err(MonitorError::EmptyCorpus);
    }

    let class_weights = inverse_frequency_weights(&train);
    let arch = settings.kind.architecture(&dataset.spec);
    let mut network = Network::new(arch, settings.seed);
    let mut adam = Adam::new(AdamConfig { lr: settings.learning_rate, ..AdamConfig::default() });
    // Stream 1 keeps the shuffle independent of weight initialization,
    // which draws from stream 0 of the same seed.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    shuffle_rng.set_stream(1);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(settings.epochs as usize);
    let mut grads = network.zero_grad();

    for epoch in 0..settings.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, batch_idx) in order.chunks(settings.batch_size).enumerate() {
            let batch: Vec<WindowSample> = batch_idx.iter().map(|&i| train[i].clone()).collect();
            let x = features_tensor(&dataset.spec, &batch)?;
            let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
            let indicators: Vec<f64> = batch.iter().map(|s| s.indicator as f64).collect();

            let cache = network.forward_batch(&x)?;
            let semantic = (settings.semantic_weight != 0.0)
                .then_some((settings.semantic_weight, indicators.as_slice()));
            let out = weighted_ce_with_semantics(cache.logits(), &labels, class_weights, semantic);
            if !out.loss.is_finite() {
                return Err(MonitorError::Neural(NeuralError::NonFiniteLoss {
                    epoch: epoch as usize,
                    step,
                    loss: out.loss,
                }));
            }
            loss_sum += out.loss;
            batches += 1;

            grads.zero();
            network.backward(&cache, &out.d_logits, &mut grads, false);
            let grad_slices = grads.slices();
            let mut params = network.param_slices_mut();
            adam.step(&mut params, &grad_slices);
        }
        let val_f1 = sample_f1(&network, dataset)?;
        curve.push(EpochRow {
            epoch,
            mean_loss: loss_sum / batches as f64,
            val_f1,
        });
    }

    let model = MonitorModel {
        name: name.to_string(),
        settings: settings.clone(),
        feature: dataset.spec.clone(),
        stats: dataset.stats.clone(),
        class_weights,
        network,
    };
    Ok((model, curve))
}

fn inverse_frequency_weights(train: &[&WindowSample]) -> [f64; 2] {
    let n = train.len() as f64;
    let pos = train.iter().filter(|s| s.label == 1).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return [1.0, 1.0];
    }
    [n / (2.0 * neg), n / (2.0 * pos)]
}

/// Plain per-sample F1 on the validation split (threshold 0.5).
fn sample_f1(network: &Network, dataset: &Dataset) -> Result<f64, MonitorError> {
    let val = dataset.split(SplitId::Val);
    if val.is_empty() {
        return Ok(0.0);
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for chunk in val.chunks(256) {
        let x = features_tensor(&dataset.spec, chunk)?;
        let cache = network.forward_batch(&x)?;
        let probs = crate::neural::softmax_rows(cache.logits());
        for (r, s) in chunk.iter().enumerate() {
            let pred = probs.row(r)[UNSAFE] >= 0.5;
            match (pred, s.label == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * p * r / (p + r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitors::features::{ChannelStats, FeatureSpec, NUM_CHANNELS};
    use crate::monitors::model::MonitorKind;

    /// Synthetic dataset: label 1 iff the mean of channel 0 across the
    /// window is positive. Linearly separable by construction.
    fn separable_dataset(n: usize, window_len: usize) -> Dataset {
        let spec = FeatureSpec { window_len, ..FeatureSpec::default() };
        let width = spec.flat_width();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        use rand::Rng;
        let mut make = |count: usize, id: &str| -> Vec<WindowSample> {
            (0..count)
                .map(|i| {
                    let shift: f64 = if i % 2 == 0 { 1.5 } else { -1.5 };
                    let features: Vec<f64> = (0..width)
                        .map(|j| {
                            let noise: f64 = rng.gen_range(-0.4..0.4);
                            if j % NUM_CHANNELS == 0 {
                                shift + noise
                            } else {
                                noise
                            }
                        })
                        .collect();
                    WindowSample {
                        trace_id: format!("{id}{:02}", i % 7),
                        t: window_len as u32 - 1,
                        label: (shift > 0.0) as u8,
                        indicator: (shift > 0.0) as u8,
                        features,
                    }
                })
                .collect()
        };
        Dataset {
            spec,
            horizon: 6,
            stats: ChannelStats::identity(NUM_CHANNELS),
            train: make(n, "tr"),
            val: make(40, "va"),
            test: make(40, "te"),
        }
    }

    fn quick_settings(kind: MonitorKind, w: f64) -> TrainSettings {
        TrainSettings {
            epochs: 12,
            batch_size: 32,
            ..TrainSettings::new(kind, w, 17)
        }
    }

    #[test]
    fn separable_toy_data_reaches_full_train_accuracy() {
        let ds = separable_dataset(160, 3);
        let (model, curve) = train_monitor(&ds, &quick_settings(MonitorKind::Mlp, 0.0), "toy").unwrap();
        assert_eq!(curve.len(), 12);
        let verdicts = model.predict_batch(&ds.train).unwrap();
        let correct = verdicts
            .iter()
            .zip(&ds.train)
            .filter(|(v, s)| v.predicted_unsafe() == (s.label == 1))
            .count();
        assert_eq!(correct, ds.train.len(), "separable data must be fit exactly");
        assert!(curve.last().unwrap().val_f1 > 0.95);
    }

    #[test]
    fn lstm_learns_the_same_toy_task() {
        let ds = separable_dataset(120, 3);
        let (model, _) = train_monitor(&ds, &quick_settings(MonitorKind::Lstm, 0.0), "toy").unwrap();
        let verdicts = model.predict_batch(&ds.train).unwrap();
        let correct = verdicts
            .iter()
            .zip(&ds.train)
            .filter(|(v, s)| v.predicted_unsafe() == (s.label == 1))
            .count();
        assert!(correct as f64 / ds.train.len() as f64 > 0.95);
    }

    #[test]
    fn training_is_deterministic_bit_for_bit() {
        let ds = separable_dataset(96, 3);
        let s = quick_settings(MonitorKind::Mlp, 0.5);
        let (a, ca) = train_monitor(&ds, &s, "a").unwrap();
        let (b, cb) = train_monitor(&ds, &s, "b").unwrap();
        assert_eq!(ca, cb);
        let fa = a.network.params_flat();
        let fb = b.network.params_flat();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_semantic_weight_matches_baseline_bit_for_bit() {
        let ds = separable_dataset(96, 3);
        let baseline = quick_settings(MonitorKind::Mlp, 0.0);
        let custom_zero = quick_settings(MonitorKind::Mlp, 0.0);
        let (a, _) = train_monitor(&ds, &baseline, "m").unwrap();
        let (b, _) = train_monitor(&ds, &custom_zero, "m").unwrap();
        assert_eq!(a, b, "w = 0 training is the baseline training");
        // And a nonzero weight genuinely changes the trajectory.
        let (c, _) = train_monitor(&ds, &quick_settings(MonitorKind::Mlp, 0.5), "m").unwrap();
        assert_ne!(a.network.params_flat(), c.network.params_flat());
    }

    #[test]
    fn runaway_learning_rate_aborts_with_location() {
        let ds = separable_dataset(64, 3);
        let mut s = quick_settings(MonitorKind::Mlp, 0.0);
        s.learning_rate = 1e120;
        s.epochs = 3;
        let err = train_monitor(&ds, &s, "boom");
        assert!(
            matches!(err, Err(MonitorError::Neural(NeuralError::NonFiniteLoss { .. }))),
            "{err:?}"
        );
    }

    #[test]
    fn stride_subsamples_the_training_split() {
        let ds = separable_dataset(100, 3);
        let mut s = quick_settings(MonitorKind::Mlp, 0.0);
        s.train_stride = 4;
        s.epochs = 2;
        let (model, _) = train_monitor(&ds, &s, "strided").unwrap();
        assert_eq!(model.settings.train_stride, 4);
        // Weights computed from the strided subset: still both classes.
        assert!(model.class_weights[0] > 0.0 && model.class_weights[1] > 0.0);
    }
}
