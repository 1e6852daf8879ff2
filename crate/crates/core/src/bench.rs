//! Timing of one score-update-and-select step, sort versus threshold.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::median_ns;
use crate::supermask::{calibrate_threshold, powerprop_apply, select_mask_threshold, select_mask_topk, Scope};
use crate::tensor::Tensor;

pub const SELECT_HEADER: &str = "size,alpha,sort_ns,threshold_ns,ratio,masks_equal";

/// Fraction pruned in every benchmark cell.
pub const BENCH_PRUNE_RATIO: f64 = 0.5;

const BENCH_LR: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectBenchRow {
    pub size: usize,
    pub alpha: f64,
    pub sort_ns: u128,
    pub threshold_ns: u128,
    pub masks_equal: bool,
}

impl SelectBenchRow {
    /// `sort_ns / threshold_ns`.
    pub fn ratio(&self) -> f64 {
        self.sort_ns as f64 / self.threshold_ns.max(1) as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{}",
            self.size,
            self.alpha,
            self.sort_ns,
            self.threshold_ns,
            self.ratio(),
            self.masks_equal
        )
    }
}

pub fn select_csv(rows: &[SelectBenchRow]) -> String {
    let mut out = String::from(SELECT_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// `n` distinct scores in `(−0.5, 0.5)`, in random order.
pub fn distinct_scores(n: usize, seed: u64) -> Tensor<f32> {
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng::stream(seed, rng::streams::BENCH, 0));
    let data = ranks.into_iter().map(|r| ((r as f64 + 0.5) / n as f64 - 0.5) as f32).collect();
    Tensor::from_vec(&[n], data).expect("length matches")
}

fn update(scores: &mut Tensor<f32>, grad: &[f32]) {
    for (s, g) in scores.data_mut().iter_mut().zip(grad) {
        *s -= BENCH_LR * g;
    }
}

/// Times `update → Ψ → select` on a population of `size` scores, once with
/// global sort-based selection and once against a threshold calibrated on
/// the initial scores. `masks_equal` compares the two selectors on the
/// initial scores.
pub fn bench_select_cell(size: usize, alpha: f64, iters: usize, seed: u64) -> Result<SelectBenchRow> {
    if size == 0 || iters == 0 {
        return Err(Error::Config("size and iteration count must be positive".into()));
    }
    let initial = distinct_scores(size, seed);
    let mut r = rng::stream(seed, rng::streams::BENCH, 1);
    let grad: Vec<f32> = (0..size).map(|_| r.random_range(-1.0..1.0)).collect();

    let effective = powerprop_apply(&initial, alpha)?;
    let theta = calibrate_threshold(std::slice::from_ref(&effective), BENCH_PRUNE_RATIO)?;
    let by_sort = select_mask_topk(std::slice::from_ref(&effective), BENCH_PRUNE_RATIO, Scope::Global)?;
    let (by_threshold, _) = select_mask_threshold(std::slice::from_ref(&effective), theta);
    let masks_equal = by_sort == by_threshold;

    let mut s = initial.clone();
    let sort_ns = median_ns(iters, || {
        update(&mut s, &grad);
        let eff = powerprop_apply(&s, alpha).expect("alpha checked");
        std::hint::black_box(select_mask_topk(&[eff], BENCH_PRUNE_RATIO, Scope::Global).expect("ratio checked"));
    });
    let mut s = initial;
    let threshold_ns = median_ns(iters, || {
        update(&mut s, &grad);
        let eff = powerprop_apply(&s, alpha).expect("alpha checked");
        std::hint::black_box(select_mask_threshold(&[eff], theta));
    });
    Ok(SelectBenchRow {
        size,
        alpha,
        sort_ns,
        threshold_ns,
        masks_equal,
    })
}

/// One row per `(size, alpha)` cell, sizes outermost.
pub fn bench_select(sizes: &[usize], alphas: &[f64], iters: usize, seed: u64) -> Result<Vec<SelectBenchRow>> {
    let mut rows = Vec::with_capacity(sizes.len() * alphas.len());
    for &size in sizes {
        for &alpha in alphas {
            rows.push(bench_select_cell(size, alpha, iters, seed)?);
        }
    }
    Ok(rows)
}
