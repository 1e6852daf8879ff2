//! Post-hoc checkpoint analysis: zero-kernel census, acceleration rate and
//! score histograms.
//!
//! A kernel is one `k×k` slice `W[o, i, :, :]`; it is a zero kernel when its
//! whole mask slice is 0, so the convolution can skip it. For conv layers
//! with `N` inputs, `M` outputs, `P` surviving kernels and output extent `D`,
//!
//! ```text
//! AR = Σ N·M·D²·k² / Σ P·D²·k²
//! ```
//!
//! which is the dense multiply-accumulate count over the kernel-skipping one.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSpec};
use crate::supermask::{powerprop_apply, prune_ratio, Mask};
use crate::tensor::{Real, Tensor};

/// `(zero, total)` kernels per conv mask; `None` for masks that are not
/// rank-4 conv masks.
pub fn count_zero_kernels(masks: &[Mask]) -> Vec<Option<(usize, usize)>> {
    masks
        .iter()
        .map(|m| {
            let &[o, i, kh, kw] = m.shape() else { return None };
            let kk = kh * kw;
            if kk == 0 {
                return None;
            }
            let zero = m.bits().chunks_exact(kk).filter(|k| k.iter().all(|&b| !b)).count();
            Some((zero, o * i))
        })
        .collect()
}

/// Static description of one conv layer for MAC accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    /// Index among the prunable layers.
    pub layer_id: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// Output spatial extent.
    pub feature_map_size: usize,
}

impl ConvGeometry {
    /// MACs contributed by one kernel: `D²·k²`.
    pub fn macs_per_kernel(&self) -> u128 {
        let (d, k) = (self.feature_map_size as u128, self.kernel_size as u128);
        d * d * k * k
    }

    pub fn dense_macs(&self) -> u128 {
        (self.in_channels * self.out_channels) as u128 * self.macs_per_kernel()
    }
}

/// Conv layers of `spec` with their output extents; non-square feature maps
/// are rejected.
pub fn conv_geometry(spec: &NetworkSpec) -> Result<Vec<ConvGeometry>> {
    let shapes = spec.shapes()?;
    let mut out = Vec::new();
    let mut prunable = 0;
    for (li, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv2d(c) => {
                let s = &shapes[li + 1];
                if s[1] != s[2] {
                    return Err(Error::Config(format!(
                        "layer {prunable}: non-square feature map {}x{}",
                        s[1], s[2]
                    )));
                }
                out.push(ConvGeometry {
                    layer_id: prunable,
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel_size: c.kernel_size,
                    feature_map_size: s[1],
                });
                prunable += 1;
            }
            LayerSpec::Linear { .. } => prunable += 1,
            _ => {}
        }
    }
    Ok(out)
}

/// Dense and kernel-sparse conv MACs, exact.
pub fn conv_macs(spec: &NetworkSpec, masks: &[Mask]) -> Result<(u128, u128)> {
    let geometry = conv_geometry(spec)?;
    let counts = count_zero_kernels(masks);
    let mut dense = 0u128;
    let mut sparse = 0u128;
    for g in &geometry {
        let Some(Some((zero, total))) = counts.get(g.layer_id) else {
            return Err(Error::shape("conv_macs", format!("no conv mask for layer {}", g.layer_id)));
        };
        if *total != g.in_channels * g.out_channels {
            return Err(Error::shape(
                "conv_macs",
                format!("layer {} mask holds {total} kernels, spec says {}", g.layer_id, g.in_channels * g.out_channels),
            ));
        }
        let surviving = total - zero;
        if surviving == 0 {
            return Err(Error::DegenerateLayer { layer: g.layer_id });
        }
        dense += g.dense_macs();
        sparse += surviving as u128 * g.macs_per_kernel();
    }
    Ok((dense, sparse))
}

/// Ratio of dense to kernel-sparse conv MACs; at least 1.
pub fn acceleration_rate(spec: &NetworkSpec, masks: &[Mask]) -> Result<f64> {
    let (dense, sparse) = conv_macs(spec, masks)?;
    if sparse == 0 {
        return Err(Error::Empty("network has no conv layers".into()));
    }
    Ok(dense as f64 / sparse as f64)
}

/// MACs of the linear layers, which the acceleration rate leaves out.
pub fn linear_macs(spec: &NetworkSpec) -> u128 {
    spec.layers
        .iter()
        .map(|l| match *l {
            LayerSpec::Linear {
                in_features,
                out_features,
            } => (in_features * out_features) as u128,
            _ => 0,
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSparsity {
    pub layer_id: usize,
    pub total_kernels: usize,
    pub zero_kernels: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub feature_map_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityReport {
    pub per_layer: Vec<LayerSparsity>,
    pub acceleration_rate: f64,
    pub zero_kernel_fraction: f64,
    pub actual_prune_ratio: f64,
    pub macs_dense: u128,
    pub macs_sparse: u128,
    pub linear_macs: u128,
}

impl SparsityReport {
    pub fn from_masks(spec: &NetworkSpec, masks: &[Mask]) -> Result<Self> {
        let geometry = conv_geometry(spec)?;
        let counts = count_zero_kernels(masks);
        let (macs_dense, macs_sparse) = conv_macs(spec, masks)?;
        let per_layer: Vec<LayerSparsity> = geometry
            .iter()
            .map(|g| {
                let (zero, total) = counts[g.layer_id].expect("checked by conv_macs");
                LayerSparsity {
                    layer_id: g.layer_id,
                    total_kernels: total,
                    zero_kernels: zero,
                    kernel_size: g.kernel_size,
                    in_channels: g.in_channels,
                    out_channels: g.out_channels,
                    feature_map_size: g.feature_map_size,
                }
            })
            .collect();
        let total: usize = per_layer.iter().map(|l| l.total_kernels).sum();
        let zero: usize = per_layer.iter().map(|l| l.zero_kernels).sum();
        Ok(Self {
            acceleration_rate: macs_dense as f64 / macs_sparse as f64,
            zero_kernel_fraction: if total == 0 { 0.0 } else { zero as f64 / total as f64 },
            actual_prune_ratio: prune_ratio(masks),
            per_layer,
            macs_dense,
            macs_sparse,
            linear_macs: linear_macs(spec),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::from_masks(&ckpt.spec, &ckpt.masks())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left_edge,count\n");
        for (edge, count) in self.bin_edges.iter().zip(&self.counts) {
            writeln!(out, "{edge},{count}").unwrap();
        }
        out
    }
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
/// A constant population gets the range `[v − 0.5, v + 0.5]`.
pub fn score_histogram<T: Real>(scores: &[T], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if scores.is_empty() {
        return Err(Error::Empty("histogram of an empty layer".into()));
    }
    let values: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("non-finite score".into()));
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { bin_edges, counts })
}

/// Raw and effective score histograms for every prunable layer.
pub fn checkpoint_histograms(ckpt: &Checkpoint, bins: usize) -> Result<Vec<(Histogram, Histogram)>> {
    ckpt.layers
        .iter()
        .map(|l| {
            let effective: Tensor<f64> = powerprop_apply(&l.scores.cast::<f64>(), l.alpha as f64)?;
            Ok((score_histogram(l.scores.data(), bins)?, score_histogram(effective.data(), bins)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, ConvSpec};
    use crate::supermask::select_mask_threshold;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn one_conv(n: usize, m: usize, d: usize) -> NetworkSpec {
        NetworkSpec {
            name: "one".into(),
            layers: vec![
                LayerSpec::Conv2d(ConvSpec {
                    in_channels: n,
                    out_channels: m,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                }),
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    in_features: m * d * d,
                    out_features: 2,
                },
            ],
            input_shape: [n, d, d],
            num_classes: 2,
        }
    }

    fn kernel_mask(shape: &[usize], zero_kernels: &[usize]) -> Mask {
        let kk = shape[2] * shape[3];
        let bits = (0..shape.iter().product::<usize>()).map(|i| !zero_kernels.contains(&(i / kk))).collect();
        Mask::from_bits(shape, bits).unwrap()
    }

    #[test]
    fn closed_form_rate() {
        let spec = one_conv(2, 2, 4);
        let masks = vec![kernel_mask(&[2, 2, 3, 3], &[0, 3]), Mask::ones(&[2, 32])];
        assert_eq!(conv_macs(&spec, &masks).unwrap(), (576, 288));
        assert_eq!(acceleration_rate(&spec, &masks).unwrap(), 2.0);
        let dense = vec![Mask::ones(&[2, 2, 3, 3]), Mask::ones(&[2, 32])];
        assert_eq!(acceleration_rate(&spec, &dense).unwrap(), 1.0);
    }

    #[test]
    fn all_zero_layer_is_degenerate() {
        let spec = one_conv(2, 2, 4);
        let masks = vec![kernel_mask(&[2, 2, 3, 3], &[0, 1, 2, 3]), Mask::ones(&[2, 32])];
        assert_eq!(count_zero_kernels(&masks)[0], Some((4, 4)));
        assert!(matches!(acceleration_rate(&spec, &masks), Err(Error::DegenerateLayer { layer: 0 })));
    }

    #[test]
    fn counts_match_slice_scan() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let shape = [2, 2, 3, 3];
            let bits: Vec<bool> = (0..36).map(|_| r.random_bool(0.15)).collect();
            let m = Mask::from_bits(&shape, bits.clone()).unwrap();
            let mut zero = 0;
            for o in 0..2 {
                for i in 0..2 {
                    let mut any = false;
                    for kh in 0..3 {
                        for kw in 0..3 {
                            any |= bits[((o * 2 + i) * 3 + kh) * 3 + kw];
                        }
                    }
                    zero += usize::from(!any);
                }
            }
            assert_eq!(count_zero_kernels(&[m])[0], Some((zero, 4)));
        }
        assert_eq!(count_zero_kernels(&[Mask::ones(&[3, 4])])[0], None);
    }

    #[test]
    fn non_square_maps_rejected() {
        let spec = NetworkSpec::conv_family(Arch::Conv2, [1, 4, 8], 2).unwrap();
        assert!(conv_geometry(&spec).is_err());
    }

    #[test]
    fn report_fields() {
        let spec = NetworkSpec::conv_family(Arch::Conv2, [1, 4, 4], 2).unwrap();
        let masks: Vec<Mask> = spec.prunable_layers().iter().map(|l| Mask::ones(&l.weight_shape)).collect();
        let report = SparsityReport::from_masks(&spec, &masks).unwrap();
        assert_eq!(report.acceleration_rate, 1.0);
        assert_eq!(report.per_layer.len(), 2);
        assert_eq!(report.per_layer[1].feature_map_size, 4);
        assert_eq!(report.linear_macs, (32 * 2 * 2 * 256 + 256 * 2) as u128);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in ["per_layer", "acceleration_rate", "zero_kernel_fraction", "actual_prune_ratio"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn histogram_basics() {
        let h = score_histogram(&[0.0f64, 0.0, 0.0], 1).unwrap();
        assert_eq!(h.counts, vec![3]);
        assert!(score_histogram::<f64>(&[], 3).is_err());
        assert!(score_histogram(&[1.0f64], 0).is_err());
        let h = score_histogram(&[0.0f64, 0.5, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.bin_edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.to_csv(), "bin_left_edge,count\n0,1\n0.5,2\n");
    }

    #[test]
    fn uniform_scores_fill_bins_evenly() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let n = 100_000;
        let s: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let h = score_histogram(&s, 10).unwrap();
        for c in h.counts {
            assert!((c as f64 - n as f64 / 10.0).abs() < 0.05 * n as f64 / 10.0);
        }
    }

    proptest! {
        #[test]
        fn histogram_conserves_population(v in prop::collection::vec(-1e6f64..1e6, 1..300), bins in 1usize..40) {
            let h = score_histogram(&v, bins).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), v.len());
            prop_assert_eq!(h.bin_edges.len(), bins + 1);
        }

        #[test]
        fn raising_theta_never_lowers_zero_kernels(seed in 0u64..1000) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = Tensor::from_fn(&[4, 3, 3, 3], |_| r.random::<f64>());
            let mut last = 0;
            for step in 0..=10 {
                let (masks, _) = select_mask_threshold(std::slice::from_ref(&s), step as f64 / 10.0);
                let zero = count_zero_kernels(&masks)[0].unwrap().0;
                prop_assert!(zero >= last);
                last = zero;
            }
        }
    }
}
