//! A small seeded two-class dataset for tests, smoke runs and benches.
//!
//! Each raw series is a positive Gaussian bump, flipped for the negative
//! class, plus uniform noise. The label is the sign of the raw mean, so it
//! stays recoverable from shape alone after z-normalisation (peak vs dip).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{handle_irregular, LabelMap, Split, TimeSeriesDataset};
use crate::error::{Error, Result};

const NOISE: f64 = 0.3;

fn raw_series(rng: &mut ChaCha8Rng, t: usize, sign: f64) -> Vec<f64> {
    let tf = t as f64;
    let width = (tf / 8.0).max(1.0);
    loop {
        let center = rng.gen_range(0.25 * tf..=0.75 * tf);
        let amp = rng.gen_range(1.0..2.0);
        let s: Vec<f64> = (0..t)
            .map(|i| {
                let d = (i as f64 - center) / width;
                sign * amp * (-0.5 * d * d).exp() + rng.gen_range(-NOISE..NOISE)
            })
            .collect();
        let mean = s.iter().sum::<f64>() / tf;
        if mean * sign > 0.0 {
            return s;
        }
    }
}

/// Raw (unnormalised) series with labels "-1"/"1", alternating by index.
pub fn two_class_raw(n: usize, t: usize, seed: u64) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            let label = if sign > 0.0 { "1" } else { "-1" };
            (label.to_string(), raw_series(&mut rng, t, sign))
        })
        .unzip()
}

pub fn two_class(name: &str, split: Split, n: usize, t: usize, seed: u64) -> Result<TimeSeriesDataset> {
    if n < 2 || t == 0 {
        return Err(Error::Usage(format!("synthetic dataset needs n >= 2 and t >= 1, got n={n}, t={t}")));
    }
    let (labels, series) = two_class_raw(n, t, seed);
    let map = LabelMap::from_labels(&labels);
    let y = labels.iter().map(|l| map.index_of(l).expect("own label")).collect();
    let x = handle_irregular(&series, t)?;
    TimeSeriesDataset::from_series(name, split, x, y, map)
}

/// Train/test pair drawn from independent streams.
pub fn two_class_pair(
    n_train: usize,
    n_test: usize,
    t: usize,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    Ok((
        two_class("Synthetic", Split::Train, n_train, t, seed)?,
        two_class("Synthetic", Split::Test, n_test, t, seed ^ 0x5eed_7e57)?,
    ))
}
