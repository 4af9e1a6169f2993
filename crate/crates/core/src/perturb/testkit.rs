//! Shared fixtures for the perturbation tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::monitors::{
    train_monitor, ChannelStats, Dataset, FeatureSpec, Monitor, MonitorKind, TrainSettings,
    WindowSample, NUM_CHANNELS,
};

/// Separable toy task: channel 0 carries the class, everything else
/// is noise. Mirrors the training module's fixture.
pub(crate) fn separable_dataset(n: usize, seed: u64) -> Dataset {
    shifted_dataset(n, seed, 1.5, 0.4)
}

/// Same toy task with a configurable class margin, for attack tests
/// that need verdicts close enough to the boundary to flip.
pub(crate) fn shifted_dataset(n: usize, seed: u64, shift_mag: f64, noise_mag: f64) -> Dataset {
    let spec = FeatureSpec::default();
    let width = spec.flat_width();
    let window_len = spec.window_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |count: usize, id: &str| -> Vec<WindowSample> {
        (0..count)
            .map(|i| {
                let shift: f64 = if i % 2 == 0 { shift_mag } else { -shift_mag };
                let features: Vec<f64> = (0..width)
                    .map(|j| {
                        let noise: f64 = rng.gen_range(-noise_mag..noise_mag);
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
        test: make(60, "te"),
    }
}

pub(crate) fn trained_monitor(kind: MonitorKind, ds: &Dataset) -> Monitor {
    let settings = TrainSettings {
        epochs: 12,
        batch_size: 32,
        ..TrainSettings::new(kind, 0.0, 17)
    };
    let (model, _) = train_monitor(ds, &settings, "toy").unwrap();
    Monitor::Neural(model)
}

/// Windows with realistic statistics: one-hot action blocks over raw
/// rows, normalized by fitted stats, so attack geometry is exercised
/// with the std magnitudes the real pipeline produces.
pub(crate) fn onehot_batch(n: usize, seed: u64) -> (FeatureSpec, ChannelStats, Vec<WindowSample>) {
    let spec = FeatureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(spec.flat_width());
        for _ in 0..spec.window_len {
            row.push(rng.gen_range(60.0..220.0));
            row.push(rng.gen_range(0.0..6.0));
            row.push(rng.gen_range(-4.0..4.0));
            row.push(rng.gen_range(-0.3..0.3));
            row.push(rng.gen_range(0.0..3.0));
            let k: usize = rng.gen_range(0..4);
            for j in 0..4 {
                row.push((j == k) as u8 as f64);
            }
        }
        raw_rows.push(row);
    }
    let stats = ChannelStats::fit(&raw_rows, NUM_CHANNELS);
    let samples = raw_rows
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let mut features = raw.clone();
            stats.normalize_row(&mut features);
            WindowSample {
                trace_id: format!("o_ep{i:03}"),
                t: spec.window_len as u32 - 1,
                label: (i % 2) as u8,
                indicator: 0,
                features,
            }
        })
        .collect();
    (spec, stats, samples)
}
