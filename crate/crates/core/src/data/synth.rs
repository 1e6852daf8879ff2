//! Gaussian class blobs: each class has a random prototype image, samples are
//! the prototype plus unit Gaussian noise.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::data::dataset::{DataSplits, Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Standard deviation of prototype pixels, relative to unit noise.
pub const PROTOTYPE_SCALE: f64 = 0.5;

/// `n` class-balanced samples (labels `i mod classes`, shuffled).
pub fn synth_dataset(seed: u64, n: usize, classes: usize, shape: [usize; 3]) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Config(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    let per: usize = shape.iter().product();
    let mut proto_rng = rng::stream(seed, rng::streams::SYNTH_PROTOTYPES, 0);
    let prototypes: Vec<f64> = (0..classes * per)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut proto_rng);
            PROTOTYPE_SCALE * z
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng::stream(seed, rng::streams::SYNTH_SAMPLES, 0));
    let mut noise = rng::stream(seed, rng::streams::SYNTH_SAMPLES, 1);
    let mut data = Vec::with_capacity(n * per);
    for &label in &labels {
        let proto = &prototypes[label * per..(label + 1) * per];
        data.extend(proto.iter().map(|&m| {
            let e: f64 = StandardNormal.sample(&mut noise);
            (m + e) as f32
        }));
    }
    let [c, h, w] = shape;
    Dataset::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, classes, Split::Train)
}

/// Normalized train/test splits drawn from one synthetic population.
pub fn synth_splits(seed: u64, n_train: usize, n_test: usize, classes: usize, shape: [usize; 3]) -> Result<DataSplits> {
    let all = synth_dataset(seed, n_train + n_test, classes, shape)?;
    let (train, test) = all.split_tail(n_test, Split::Test)?;
    DataSplits::normalized(train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(4, 40, 4, [1, 4, 4]).unwrap();
        let b = synth_dataset(4, 40, 4, [1, 4, 4]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_dataset(5, 40, 4, [1, 4, 4]).unwrap());
    }

    #[test]
    fn two_classes_balanced() {
        let d = synth_dataset(1, 100, 2, [3, 4, 4]).unwrap();
        assert_eq!(d.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert!(synth_dataset(1, 1, 2, [3, 4, 4]).is_err());
    }

    #[test]
    fn nearest_mean_probe_separates_classes() {
        // Class means estimated on the train split define a linear classifier
        // (argmin ‖x − μ_c‖² is linear in x); it should be nearly perfect.
        let splits = synth_splits(9, 400, 200, 4, [3, 8, 8]).unwrap();
        let per = 3 * 8 * 8;
        let mut means = vec![0.0f64; 4 * per];
        let mut counts = [0usize; 4];
        for (i, &l) in splits.train.labels.iter().enumerate() {
            counts[l] += 1;
            for (m, &x) in means[l * per..(l + 1) * per].iter_mut().zip(&splits.train.images.data()[i * per..(i + 1) * per]) {
                *m += x as f64;
            }
        }
        for (c, &k) in counts.iter().enumerate() {
            means[c * per..(c + 1) * per].iter_mut().for_each(|m| *m /= k as f64);
        }
        let correct = splits
            .test
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| {
                let x = &splits.test.images.data()[i * per..(i + 1) * per];
                let dist = |c: usize| -> f64 {
                    x.iter().zip(&means[c * per..(c + 1) * per]).map(|(&a, b)| (a as f64 - b).powi(2)).sum()
                };
                (0..4).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap() == l
            })
            .count();
        assert!(correct as f64 / splits.test.len() as f64 > 0.95);
    }
}
