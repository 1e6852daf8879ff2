use std::time::Instant;

use crate::data::{Checkpoint, DataSplits, LayerState, Phase};
use crate::error::{Error, Result};
use crate::nn::{backward, forward_traced, softmax_cross_entropy};
use crate::supermask::prune_ratio;
use crate::tensor::Tensor;
use crate::trainer::config::FinetuneConfig;
use crate::trainer::metrics::EpochMetrics;
use crate::trainer::optim::{lr_at, optimizer_step, OptimizerState};
use crate::trainer::{binarize_all, evaluate};

/// Trains the latent weights of the layers in `config.scope` with masks and
/// scores frozen. The forward pass stays binarized with the scale recomputed
/// from the live weights; the weight gradient passes straight through `sign`
/// and is gated by the mask.
pub fn finetune(ckpt: &Checkpoint, config: &FinetuneConfig, data: &DataSplits) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    config.validate()?;
    ckpt.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let spec = &ckpt.spec;
    let masks = ckpt.masks();
    let wanted = config.scope.layers(masks.len());
    if !wanted.iter().zip(&masks).any(|(&w, m)| w && m.kept() > 0) {
        return Err(Error::Config(format!("scope '{}' selects no trainable weights", config.scope)));
    }
    let mut weights: Vec<Tensor<f32>> = ckpt.layers.iter().map(|l| l.weights.clone()).collect();
    let optim = config.optimizer_config();
    let mut state = OptimizerState::new(&weights);
    let mut metrics = Vec::with_capacity(config.epochs);
    let ratio = prune_ratio(&masks);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_at(config.lr_schedule, config.lr, epoch, config.epochs)?;
        let mut loss_sum = 0.0;
        for (step, batch) in data.train.epoch_batches(config.batch_size, config.seed, epoch).iter().enumerate() {
            let eff: Vec<Tensor<f32>> = binarize_all(&weights, &masks)?.iter().map(|l| l.effective_weights()).collect();
            let (x, y) = data.train.batch(batch);
            let (logits, trace) = forward_traced(spec, &eff, &x)?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, step });
            }
            loss_sum += loss as f64 * batch.len() as f64;
            let grads: Vec<Option<Tensor<f32>>> = backward(spec, &eff, &trace, &grad_logits, &wanted)?
                .into_iter()
                .zip(&masks)
                .map(|(g, m)| {
                    g.map(|mut g| {
                        for (v, &keep) in g.data_mut().iter_mut().zip(m.bits()) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                        g
                    })
                })
                .collect();
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch: epoch + 1, step });
            }
            optimizer_step(&mut weights, &grads, &mut state, &optim, lr)?;
        }
        let eff: Vec<Tensor<f32>> = binarize_all(&weights, &masks)?.iter().map(|l| l.effective_weights()).collect();
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            phase: Phase::Finetune,
            train_loss: loss_sum / data.train.len() as f64,
            test_accuracy: evaluate(spec, &eff, &data.test)?,
            actual_prune_ratio: ratio,
            epoch_time_s: start.elapsed().as_secs_f64(),
        });
    }

    let layers = ckpt
        .layers
        .iter()
        .zip(weights)
        .zip(&wanted)
        .map(|((old, w), &trained)| {
            if trained {
                LayerState::new(w, old.scores.clone(), old.mask.clone(), old.alpha)
            } else {
                Ok(old.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Checkpoint {
        spec: spec.clone(),
        layers,
        seed: ckpt.seed,
        phase: Phase::Finetune,
    };
    Ok((out, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_splits;
    use crate::nn::Arch;
    use crate::trainer::{train_mpt, FinetuneScope, OptimizerKind, TrainConfig};

    fn trained() -> (Checkpoint, DataSplits) {
        let data = synth_splits(8, 96, 48, 3, [1, 8, 8]).unwrap();
        let config = TrainConfig {
            arch: Arch::Conv2,
            epochs: 1,
            batch_size: 32,
            ..Default::default()
        };
        (train_mpt(&config, &data).unwrap().0, data)
    }

    #[test]
    fn scope_and_mask_are_respected() {
        let (ckpt, data) = trained();
        for scope in FinetuneScope::ALL {
            let config = FinetuneConfig {
                scope,
                epochs: 2,
                batch_size: 32,
                lr: 0.05,
                optimizer: OptimizerKind::Adam,
                ..Default::default()
            };
            let (out, metrics) = finetune(&ckpt, &config, &data).unwrap();
            assert_eq!(metrics.len(), 2);
            assert_eq!(out.phase, Phase::Finetune);
            let wanted = scope.layers(ckpt.layers.len());
            for ((a, b), &w) in ckpt.layers.iter().zip(&out.layers).zip(&wanted) {
                assert_eq!(a.mask, b.mask);
                assert_eq!(a.scores, b.scores);
                if w {
                    assert_ne!(a.weights, b.weights, "{scope}");
                } else {
                    assert_eq!(a.weights, b.weights, "{scope}");
                }
            }
            out.validate().unwrap();
        }
    }

    #[test]
    fn pruned_weights_get_no_gradient() {
        let (ckpt, data) = trained();
        let config = FinetuneConfig {
            scope: FinetuneScope::FullModel,
            epochs: 1,
            batch_size: 32,
            lr: 0.05,
            ..Default::default()
        };
        let (out, _) = finetune(&ckpt, &config, &data).unwrap();
        for (a, b) in ckpt.layers.iter().zip(&out.layers) {
            for ((x, y), &keep) in a.weights.data().iter().zip(b.weights.data()).zip(a.mask.bits()) {
                if !keep {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn too_many_epochs_rejected() {
        let (ckpt, data) = trained();
        let config = FinetuneConfig {
            epochs: 201,
            ..Default::default()
        };
        assert!(matches!(finetune(&ckpt, &config, &data), Err(Error::Config(_))));
    }
}
