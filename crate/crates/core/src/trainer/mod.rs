//! Score training with frozen weights, and weight fine-tuning with frozen
//! masks.

pub mod config;
pub mod finetune;
pub mod grid;
pub mod metrics;
pub mod mpt;
pub mod optim;

pub use config::{FinetuneConfig, FinetuneScope, TrainConfig, MAX_FINETUNE_EPOCHS};
pub use finetune::finetune;
pub use grid::{best_cell, finetune_grid, grid_csv, GridAxes, GridCell};
pub use metrics::{metrics_csv, EpochMetrics, METRICS_HEADER};
pub use mpt::{init_weights, train_mpt, train_mpt_observed};
pub use optim::{lr_at, optimizer_step, LrSchedule, OptimizerConfig, OptimizerKind, OptimizerState};

use crate::data::{Checkpoint, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, forward, NetworkSpec};
use crate::supermask::{Mask, MaskedBinaryLayer};
use crate::tensor::{Real, Tensor};

const EVAL_BATCH: usize = 256;

/// Binarizes every layer under its mask, naming the first fully pruned one.
pub fn binarize_all<T: Real>(weights: &[Tensor<T>], masks: &[Mask]) -> Result<Vec<MaskedBinaryLayer<T>>> {
    weights
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(j, (w, m))| {
            if m.kept() == 0 {
                return Err(Error::LayerFullyPruned { layer: j });
            }
            MaskedBinaryLayer::new(w.clone(), m.clone())
        })
        .collect()
}

/// Predicted class for every sample.
pub fn predict<T: Real>(spec: &NetworkSpec, weights: &[Tensor<T>], data: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    for batch in data.sequential_batches(EVAL_BATCH) {
        let (x, _) = data.batch(&batch);
        out.extend(argmax_rows(&forward(spec, weights, &x.cast::<T>())?));
    }
    Ok(out)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Test accuracy of a network given its effective weights.
pub fn evaluate(spec: &NetworkSpec, weights: &[Tensor<f32>], data: &Dataset) -> Result<f64> {
    Ok(accuracy(&predict(spec, weights, data)?, &data.labels))
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &Dataset) -> Result<f64> {
    evaluate(&ckpt.spec, &ckpt.effective_weights::<f32>()?, data)
}
