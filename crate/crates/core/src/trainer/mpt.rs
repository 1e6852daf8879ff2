use std::time::Instant;

use rand_distr::{Distribution, Normal};

use crate::data::{Checkpoint, DataSplits, LayerState, Phase};
use crate::error::{Error, Result};
use crate::nn::{backward, forward_traced, softmax_cross_entropy, NetworkSpec};
use crate::rng;
use crate::supermask::{
    calibrate_threshold, init_scores_bounded, powerprop_apply, powerprop_grad, prune_ratio, score_gradient, Mask,
    SelectionMethod, SelectionPolicy,
};
use crate::tensor::Tensor;
use crate::trainer::config::TrainConfig;
use crate::trainer::metrics::EpochMetrics;
use crate::trainer::optim::{lr_at, optimizer_step, OptimizerState};
use crate::trainer::{binarize_all, evaluate};

/// Latent weights `W ~ N(0, σ²)` per layer with `σ = sqrt(π / (fan_in · keep))`,
/// `keep` being the layer's kept fraction under `masks`.
///
/// The binarization scale is `E|W| = σ·sqrt(2/π)`, so the effective layer has
/// variance `2 / fan_in` over its surviving inputs.
pub fn init_weights(spec: &NetworkSpec, masks: &[Mask], seed: u64) -> Result<Vec<Tensor<f32>>> {
    spec.prunable_layers()
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(j, (layer, mask))| {
            let keep = (mask.kept().max(1) as f64) / mask.len() as f64;
            let sigma = (std::f64::consts::PI / (layer.fan_in as f64 * keep)).sqrt();
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut r = rng::stream(seed, rng::streams::WEIGHTS, j as u64);
            Ok(Tensor::from_fn(&layer.weight_shape, |_| normal.sample(&mut r) as f32))
        })
        .collect()
}

struct Scores<'a> {
    config: &'a TrainConfig,
}

impl Scores<'_> {
    fn effective(&self, raw: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        if self.config.powerprop {
            raw.iter().map(|s| powerprop_apply(s, self.config.alpha)).collect()
        } else {
            Ok(raw.to_vec())
        }
    }

    fn raw_gradient(&self, raw: &Tensor<f32>, grad_effective: Tensor<f32>) -> Result<Tensor<f32>> {
        if self.config.powerprop {
            powerprop_grad(raw, &grad_effective, self.config.alpha)
        } else {
            Ok(grad_effective)
        }
    }
}

pub fn train_mpt(config: &TrainConfig, data: &DataSplits) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    train_mpt_observed(config, data, |_| {})
}

/// [`train_mpt`], reporting each epoch's metrics as soon as they exist.
pub fn train_mpt_observed(
    config: &TrainConfig,
    data: &DataSplits,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let spec = NetworkSpec::conv_family(config.arch, data.train.sample_shape(), data.train.num_classes)?;
    let alpha = if config.powerprop { config.alpha } else { 1.0 };
    let mut scores = init_scores_bounded::<f32>(&spec, alpha, config.seed, config.score_bound)?.scores;
    let map = Scores { config };

    let initial = map.effective(&scores)?;
    let policy = match (config.selection.method, config.calibrate_theta) {
        (SelectionMethod::Threshold { .. }, Some(p)) => {
            SelectionPolicy::threshold(calibrate_threshold(&initial, p)? as f64)
        }
        _ => config.selection,
    };
    let weights = init_weights(&spec, &policy.select(&initial)?, config.seed)?;

    let optim = config.optimizer_config();
    let mut state = OptimizerState::new(&scores);
    let all_layers = vec![true; scores.len()];
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_at(config.lr_schedule, config.lr, epoch, config.epochs)?;
        let mut loss_sum = 0.0;
        for (step, batch) in data.train.epoch_batches(config.batch_size, config.seed, epoch).iter().enumerate() {
            let masks = policy.select(&map.effective(&scores)?)?;
            let layers = binarize_all(&weights, &masks)?;
            let eff: Vec<Tensor<f32>> = layers.iter().map(|l| l.effective_weights()).collect();
            let (x, y) = data.train.batch(batch);
            let (logits, trace) = forward_traced(&spec, &eff, &x)?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, step });
            }
            loss_sum += loss as f64 * batch.len() as f64;
            let grads = backward(&spec, &eff, &trace, &grad_logits, &all_layers)?;
            let score_grads = grads
                .into_iter()
                .zip(&layers)
                .zip(&scores)
                .map(|((g, layer), s)| {
                    let g_eff = g.expect("every layer requested");
                    let g_s = score_gradient(&g_eff, &layer.binarized)?;
                    map.raw_gradient(s, g_s).map(Some)
                })
                .collect::<Result<Vec<_>>>()?;
            if score_grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch: epoch + 1, step });
            }
            optimizer_step(&mut scores, &score_grads, &mut state, &optim, lr)?;
        }
        let masks = policy.select(&map.effective(&scores)?)?;
        let eff: Vec<Tensor<f32>> = binarize_all(&weights, &masks)?.iter().map(|l| l.effective_weights()).collect();
        let row = EpochMetrics {
            epoch: epoch + 1,
            phase: Phase::Mpt,
            train_loss: loss_sum / data.train.len() as f64,
            test_accuracy: evaluate(&spec, &eff, &data.test)?,
            actual_prune_ratio: prune_ratio(&masks),
            epoch_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        metrics.push(row);
    }

    let masks = policy.select(&map.effective(&scores)?)?;
    let layers = weights
        .into_iter()
        .zip(scores)
        .zip(masks)
        .map(|((w, s), m)| LayerState::new(w, s, m, alpha as f32))
        .collect::<Result<Vec<_>>>()?;
    let ckpt = Checkpoint {
        spec,
        layers,
        seed: config.seed,
        phase: Phase::Mpt,
    };
    Ok((ckpt, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_splits;
    use crate::nn::Arch;
    use crate::supermask::{init_scores, Scope};

    fn tiny() -> DataSplits {
        synth_splits(3, 96, 48, 2, [1, 8, 8]).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            arch: Arch::Conv2,
            epochs: 2,
            batch_size: 32,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn weights_never_move() {
        let data = tiny();
        let (ckpt, metrics) = train_mpt(&config(), &data).unwrap();
        assert_eq!(metrics.len(), 2);
        let spec = &ckpt.spec;
        let initial = init_scores::<f32>(spec, 1.0, 5).unwrap().effective().unwrap();
        let masks = SelectionPolicy::topk(0.5, Scope::Global).select(&initial).unwrap();
        let w0 = init_weights(spec, &masks, 5).unwrap();
        for (l, w) in ckpt.layers.iter().zip(&w0) {
            assert_eq!(&l.weights, w);
        }
        assert_ne!(ckpt.layers[0].scores, init_scores::<f32>(spec, 1.0, 5).unwrap().scores[0]);
    }

    #[test]
    fn prune_ratio_tracks_target() {
        let data = tiny();
        let (ckpt, metrics) = train_mpt(&config(), &data).unwrap();
        let total: usize = ckpt.layers.iter().map(|l| l.mask.len()).sum();
        for m in &metrics {
            assert!((m.actual_prune_ratio - 0.5).abs() <= 1.0 / total as f64);
            assert!((0.0..=1.0).contains(&m.test_accuracy));
            assert!(m.train_loss.is_finite());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let data = tiny();
        let (a, ma) = train_mpt(&config(), &data).unwrap();
        let (b, mb) = train_mpt(&config(), &data).unwrap();
        assert_eq!(a, b);
        for (x, y) in ma.iter().zip(&mb) {
            assert_eq!((x.train_loss, x.test_accuracy), (y.train_loss, y.test_accuracy));
        }
    }

    #[test]
    fn calibrated_threshold_starts_near_target() {
        let data = tiny();
        let c = TrainConfig {
            selection: SelectionPolicy::threshold(0.0),
            calibrate_theta: Some(0.7),
            epochs: 1,
            ..config()
        };
        let (_, metrics) = train_mpt(&c, &data).unwrap();
        assert!((metrics[0].actual_prune_ratio - 0.7).abs() < 0.1);
    }

    #[test]
    fn fully_pruned_layer_aborts() {
        let data = tiny();
        let c = TrainConfig {
            selection: SelectionPolicy::threshold(10.0),
            ..config()
        };
        assert!(matches!(train_mpt(&c, &data), Err(Error::LayerFullyPruned { layer: 0 })));
    }

    #[test]
    fn nan_input_aborts() {
        let mut data = tiny();
        data.train.images.data_mut()[0] = f32::NAN;
        assert!(matches!(train_mpt(&config(), &data), Err(Error::Diverged { epoch: 1, .. })));
    }
}
