use std::fmt::Write as _;

use crate::data::Phase;

pub const METRICS_HEADER: &str = "epoch,phase,train_loss,test_accuracy,actual_prune_ratio,epoch_time_s";

/// One row of the per-epoch metrics file. Epochs count from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub actual_prune_ratio: f64,
    pub epoch_time_s: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3}",
            self.epoch,
            self.phase.tag(),
            self.train_loss,
            self.test_accuracy,
            self.actual_prune_ratio,
            self.epoch_time_s
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        writeln!(out, "{}", row.csv_row()).unwrap();
    }
    out
}
