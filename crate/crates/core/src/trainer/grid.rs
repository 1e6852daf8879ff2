//! Cross-product search over fine-tuning hyperparameters.

use std::fmt::Write as _;

use crate::data::{Checkpoint, DataSplits};
use crate::error::{Error, Result};
use crate::trainer::config::{FinetuneConfig, FinetuneScope};
use crate::trainer::finetune::finetune;
use crate::trainer::optim::{LrSchedule, OptimizerKind};

pub const GRID_HEADER: &str = "optimizer,schedule,lr,batch_size,scope,final_accuracy";

#[derive(Clone, Debug, PartialEq)]
pub struct GridAxes {
    pub optimizers: Vec<OptimizerKind>,
    pub schedules: Vec<LrSchedule>,
    pub lrs: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub scopes: Vec<FinetuneScope>,
}

impl Default for GridAxes {
    /// 2 optimizers × 3 schedules × 4 rates × 4 batch sizes × 3 scopes.
    fn default() -> Self {
        Self {
            optimizers: OptimizerKind::ALL.to_vec(),
            schedules: LrSchedule::ALL.to_vec(),
            lrs: vec![0.1, 0.01, 0.001, 0.0001],
            batch_sizes: vec![64, 128, 256, 512],
            scopes: FinetuneScope::ALL.to_vec(),
        }
    }
}

impl GridAxes {
    pub fn len(&self) -> usize {
        self.optimizers.len() * self.schedules.len() * self.lrs.len() * self.batch_sizes.len() * self.scopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every cell as a config derived from `base`, in row-major axis order.
    pub fn configs(&self, base: &FinetuneConfig) -> Vec<FinetuneConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &optimizer in &self.optimizers {
            for &lr_schedule in &self.schedules {
                for &lr in &self.lrs {
                    for &batch_size in &self.batch_sizes {
                        for &scope in &self.scopes {
                            out.push(FinetuneConfig {
                                optimizer,
                                lr_schedule,
                                lr,
                                batch_size,
                                scope,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub lr: f64,
    pub batch_size: usize,
    pub scope: FinetuneScope,
    pub final_accuracy: f64,
}

impl GridCell {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6}",
            self.optimizer, self.schedule, self.lr, self.batch_size, self.scope, self.final_accuracy
        )
    }
}

/// Fine-tunes `ckpt` once per grid cell, each run starting from the same
/// checkpoint. `on_cell` sees every finished cell.
pub fn finetune_grid(
    ckpt: &Checkpoint,
    axes: &GridAxes,
    base: &FinetuneConfig,
    data: &DataSplits,
    mut on_cell: impl FnMut(&GridCell),
) -> Result<Vec<GridCell>> {
    if axes.is_empty() {
        return Err(Error::Config("grid has an empty axis".into()));
    }
    axes.configs(base)
        .into_iter()
        .map(|config| {
            let (_, metrics) = finetune(ckpt, &config, data)?;
            let cell = GridCell {
                optimizer: config.optimizer,
                schedule: config.lr_schedule,
                lr: config.lr,
                batch_size: config.batch_size,
                scope: config.scope,
                final_accuracy: metrics.last().map_or(0.0, |m| m.test_accuracy),
            };
            on_cell(&cell);
            Ok(cell)
        })
        .collect()
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from(GRID_HEADER);
    out.push('\n');
    for c in cells {
        writeln!(out, "{}", c.csv_row()).unwrap();
    }
    out
}

/// Highest final accuracy; the earliest cell wins ties.
pub fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().fold(None, |best: Option<&GridCell>, c| match best {
        Some(b) if b.final_accuracy >= c.final_accuracy => Some(b),
        _ => Some(c),
    })
}
