use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images `[N, C, H, W]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::shape("dataset", format!("images must be [N, C, H, W], found {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} images but {} labels", images.shape()[0], labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, classes: num_classes });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            let indices: Vec<usize> = (0..n).collect();
            self.images = self.images.gather(&indices);
            self.labels.truncate(n);
        }
        self
    }

    /// Splits off the trailing `n_tail` samples.
    pub fn split_tail(self, n_tail: usize, tail_split: Split) -> Result<(Dataset, Dataset)> {
        if n_tail > self.len() {
            return Err(Error::Config(format!("cannot split {n_tail} of {} samples", self.len())));
        }
        let head_n = self.len() - n_tail;
        let head: Vec<usize> = (0..head_n).collect();
        let tail: Vec<usize> = (head_n..self.len()).collect();
        let a = Dataset::new(
            self.images.gather(&head),
            self.labels[..head_n].to_vec(),
            self.num_classes,
            self.split,
        )?;
        let b = Dataset::new(
            self.images.gather(&tail),
            self.labels[head_n..].to_vec(),
            self.num_classes,
            tail_split,
        )?;
        Ok((a, b))
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (self.images.gather(indices), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Shuffled index batches for one epoch, derived from `(seed, epoch)`.
    pub fn epoch_batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, rng::streams::SHUFFLE, epoch as u64));
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Sequential batches, for evaluation.
    pub fn sequential_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.len())
            .collect::<Vec<_>>()
            .chunks(batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn compute(data: &Dataset) -> Self {
        let [c, h, w] = data.sample_shape();
        let plane = h * w;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for (k, chunk) in data.images.data().chunks(plane).enumerate() {
            let ch = k % c;
            for &v in chunk {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
        let count = (data.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / count - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &mut Dataset) {
        let [c, h, w] = data.sample_shape();
        let plane = h * w;
        for (k, chunk) in data.images.data_mut().chunks_mut(plane).enumerate() {
            let ch = k % c;
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
}

/// Train and test splits sharing the train split's normalization.
#[derive(Clone, Debug)]
pub struct DataSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub stats: ChannelStats,
}

impl DataSplits {
    pub fn normalized(mut train: Dataset, mut test: Dataset) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("train and test splits must be nonempty".into()));
        }
        if train.sample_shape() != test.sample_shape() {
            return Err(Error::shape(
                "dataset",
                format!("train samples {:?} vs test samples {:?}", train.sample_shape(), test.sample_shape()),
            ));
        }
        let classes = train.num_classes.max(test.num_classes);
        train.num_classes = classes;
        test.num_classes = classes;
        let stats = ChannelStats::compute(&train);
        stats.apply(&mut train);
        stats.apply(&mut test);
        Ok(Self { train, test, stats })
    }
}
