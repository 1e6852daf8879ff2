//! Inference that skips all-zero kernels.
//!
//! A [`CompactModel`] stores, per conv layer, only the kernels whose mask
//! slice keeps at least one weight, sorted by `(out_ch, in_ch)`. Each output
//! plane accumulates its surviving kernels in input-channel order through the
//! same routine as the dense convolution, so skipping a kernel removes
//! exactly the terms that were zero.

use std::time::Instant;

use serde::Serialize;

use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::conv::{accumulate_kernel, crop_output, geometry, pad_planes};
use crate::nn::{flatten, forward, linear_forward, maxpool2x2_forward, relu_forward, ConvSpec, LayerSpec, NetworkSpec};
use crate::supermask::MaskedBinaryLayer;
use crate::tensor::{Real, Tensor};

/// Surviving kernels of one conv layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactConv<T> {
    pub conv: ConvSpec,
    /// `(out_ch, in_ch)` of each stored kernel, sorted.
    pub kernels: Vec<(usize, usize)>,
    /// `k·k` binarized values per stored kernel, in `kernels` order.
    pub values: Vec<T>,
    pub scale: T,
    /// `starts[o]..starts[o + 1]` indexes the kernels of output channel `o`.
    starts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CompactLayer<T> {
    Conv(CompactConv<T>),
    Linear { weights: Tensor<T>, scale: T },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactModel<T> {
    pub spec: NetworkSpec,
    /// One entry per prunable layer.
    pub layers: Vec<CompactLayer<T>>,
}

impl<T: Real> CompactModel<T> {
    /// Drops every kernel whose mask slice is entirely zero.
    pub fn from_layers(spec: &NetworkSpec, layers: &[MaskedBinaryLayer<T>]) -> Result<Self> {
        let prunable = spec.prunable_layers();
        if prunable.len() != layers.len() {
            return Err(Error::shape(
                "compact_model",
                format!("{} layers for {} prunable layers", layers.len(), prunable.len()),
            ));
        }
        let mut out = Vec::with_capacity(layers.len());
        for (p, layer) in prunable.iter().zip(layers) {
            if layer.weights.shape() != p.weight_shape.as_slice() {
                return Err(Error::shape(
                    "compact_model",
                    format!("weights {:?}, expected {:?}", layer.weights.shape(), p.weight_shape),
                ));
            }
            let eff = layer.effective_weights();
            out.push(match spec.layers[p.layer_index] {
                LayerSpec::Conv2d(conv) => {
                    let kk = conv.kernel_size * conv.kernel_size;
                    let mut kernels = Vec::new();
                    let mut values = Vec::new();
                    let mut starts = vec![0];
                    for o in 0..conv.out_channels {
                        for i in 0..conv.in_channels {
                            let at = (o * conv.in_channels + i) * kk;
                            if layer.mask.bits()[at..at + kk].iter().any(|&b| b) {
                                kernels.push((o, i));
                                values.extend_from_slice(&eff.data()[at..at + kk]);
                            }
                        }
                        starts.push(kernels.len());
                    }
                    CompactLayer::Conv(CompactConv {
                        conv,
                        kernels,
                        values,
                        scale: layer.scale,
                        starts,
                    })
                }
                _ => CompactLayer::Linear {
                    weights: eff,
                    scale: layer.scale,
                },
            });
        }
        Ok(Self {
            spec: spec.clone(),
            layers: out,
        })
    }

    /// Dense effective weights rebuilt from the stored kernels.
    pub fn densify(&self) -> Vec<Tensor<T>> {
        self.layers
            .iter()
            .map(|l| match l {
                CompactLayer::Conv(c) => {
                    let k = c.conv.kernel_size;
                    let mut t = Tensor::zeros(&c.conv.weight_shape());
                    for (j, &(o, i)) in c.kernels.iter().enumerate() {
                        let at = (o * c.conv.in_channels + i) * k * k;
                        t.data_mut()[at..at + k * k].copy_from_slice(&c.values[j * k * k..(j + 1) * k * k]);
                    }
                    t
                }
                CompactLayer::Linear { weights, .. } => weights.clone(),
            })
            .collect()
    }

    /// Stored kernel count per conv layer (`None` for linear layers).
    pub fn kernel_counts(&self) -> Vec<Option<usize>> {
        self.layers
            .iter()
            .map(|l| match l {
                CompactLayer::Conv(c) => Some(c.kernels.len()),
                CompactLayer::Linear { .. } => None,
            })
            .collect()
    }

    /// Conv MACs of the kernel-skipping forward: `P·D²·k²` per layer.
    pub fn mac_count(&self) -> Result<u128> {
        let extents = conv_output_extents(&self.spec)?;
        let mut convs = self.layers.iter().filter_map(|l| match l {
            CompactLayer::Conv(c) => Some(c),
            CompactLayer::Linear { .. } => None,
        });
        let mut total = 0u128;
        for (d, _) in extents {
            let c = convs.next().expect("one compact layer per conv");
            let k = c.conv.kernel_size as u128;
            total += c.kernels.len() as u128 * d as u128 * d as u128 * k * k;
        }
        Ok(total)
    }
}

pub fn compact_model<T: Real>(ckpt: &Checkpoint) -> Result<CompactModel<T>> {
    ckpt.validate()?;
    CompactModel::from_layers(&ckpt.spec, &ckpt.binary_layers::<T>()?)
}

/// Output height and width of every conv layer, in order.
fn conv_output_extents(spec: &NetworkSpec) -> Result<Vec<(usize, usize)>> {
    let shapes = spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Conv2d(_)))
        .map(|(i, _)| (shapes[i + 1][1], shapes[i + 1][2]))
        .collect())
}

/// Conv MACs of the dense forward: `N·M·D²·k²` per layer. Square maps
/// assumed, as in [`CompactModel::mac_count`].
pub fn dense_mac_count(spec: &NetworkSpec) -> Result<u128> {
    let extents = conv_output_extents(spec)?;
    let convs = spec.layers.iter().filter_map(|l| match l {
        LayerSpec::Conv2d(c) => Some(c),
        _ => None,
    });
    Ok(convs
        .zip(extents)
        .map(|(c, (d, _))| {
            let k = c.kernel_size as u128;
            (c.in_channels * c.out_channels) as u128 * d as u128 * d as u128 * k * k
        })
        .sum())
}

fn sparse_conv<T: Real>(x: &Tensor<T>, c: &CompactConv<T>) -> Result<Tensor<T>> {
    let (b, n, m, g) = geometry("sparse_forward", x.shape(), &c.conv.weight_shape(), c.conv.stride, c.conv.padding)?;
    let padded = pad_planes(x.data(), g);
    let (pl, out_plane, kk) = (g.padded_len(), g.out_h * g.out_w, g.k * g.k);
    let mut out = Tensor::zeros(&[b, m, g.out_h, g.out_w]);
    let y = out.data_mut();
    let mut acc = vec![T::zero(); g.span()];
    for bi in 0..b {
        for oc in 0..m {
            acc.fill(T::zero());
            for j in c.starts[oc]..c.starts[oc + 1] {
                let ic = c.kernels[j].1;
                let src = &padded[(bi * n + ic) * pl..(bi * n + ic + 1) * pl];
                accumulate_kernel(&mut acc, src, &c.values[j * kk..(j + 1) * kk], g);
            }
            crop_output(&acc, &mut y[(bi * m + oc) * out_plane..(bi * m + oc + 1) * out_plane], g);
        }
    }
    Ok(out)
}

/// Logits computed over surviving kernels only.
pub fn sparse_forward<T: Real>(model: &CompactModel<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let spec = &model.spec;
    if input.shape().len() != 4 || input.shape()[1..] != spec.input_shape {
        return Err(Error::shape(
            "sparse_forward",
            format!("input {:?} does not match [B, {:?}]", input.shape(), spec.input_shape),
        ));
    }
    let mut compact = model.layers.iter();
    let mut x = input.clone();
    for layer in &spec.layers {
        x = match layer {
            LayerSpec::Conv2d(_) => match compact.next() {
                Some(CompactLayer::Conv(c)) => sparse_conv(&x, c)?,
                _ => return Err(Error::Invariant("compact layers out of step with spec".into())),
            },
            LayerSpec::Linear { .. } => match compact.next() {
                Some(CompactLayer::Linear { weights, .. }) => linear_forward(&x, weights)?,
                _ => return Err(Error::Invariant("compact layers out of step with spec".into())),
            },
            LayerSpec::Relu => relu_forward(&x),
            LayerSpec::MaxPool2x2 => maxpool2x2_forward(&x)?.0,
            LayerSpec::Flatten => flatten(x)?,
        };
    }
    Ok(x)
}

/// Median wall time of `repeats` calls after one warm-up call.
pub fn median_ns(repeats: usize, mut f: impl FnMut()) -> u128 {
    f();
    let mut times: Vec<u128> = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    times[times.len() / 2]
}

pub const MIN_BENCH_REPEATS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceBench {
    pub dense_ns: u128,
    pub sparse_ns: u128,
    pub speedup: f64,
    pub theoretical_ar: f64,
    pub macs_dense: u128,
    pub macs_sparse: u128,
}

impl InferenceBench {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench serializes")
    }
}

/// Times the dense forward over the densified weights against
/// [`sparse_forward`] on the same input.
pub fn bench_inference<T: Real>(model: &CompactModel<T>, input: &Tensor<T>, repeats: usize) -> Result<InferenceBench> {
    if repeats < MIN_BENCH_REPEATS {
        return Err(Error::Config(format!("benchmark needs at least {MIN_BENCH_REPEATS} repeats, got {repeats}")));
    }
    let dense_weights = model.densify();
    forward(&model.spec, &dense_weights, input)?;
    sparse_forward(model, input)?;
    let dense_ns = median_ns(repeats, || {
        std::hint::black_box(forward(&model.spec, &dense_weights, input).unwrap());
    });
    let sparse_ns = median_ns(repeats, || {
        std::hint::black_box(sparse_forward(model, input).unwrap());
    });
    let macs_dense = dense_mac_count(&model.spec)?;
    let macs_sparse = model.mac_count()?;
    Ok(InferenceBench {
        dense_ns,
        sparse_ns,
        speedup: dense_ns as f64 / sparse_ns.max(1) as f64,
        theoretical_ar: macs_dense as f64 / macs_sparse.max(1) as f64,
        macs_dense,
        macs_sparse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::{acceleration_rate, conv_macs, count_zero_kernels};
    use crate::nn::{argmax_rows, Arch};
    use crate::supermask::Mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layers(spec: &NetworkSpec, sparsity: f64, seed: u64) -> Vec<MaskedBinaryLayer<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        spec.prunable_layers()
            .iter()
            .map(|l| {
                let w = Tensor::from_fn(&l.weight_shape, |_| r.random_range(-1.0..1.0));
                let mut bits: Vec<bool> = (0..l.len()).map(|_| !r.random_bool(sparsity)).collect();
                bits[0] = true;
                MaskedBinaryLayer::new(w, Mask::from_bits(&l.weight_shape, bits).unwrap()).unwrap()
            })
            .collect()
    }

    fn small_spec() -> NetworkSpec {
        NetworkSpec::conv_family(Arch::Conv4, [3, 8, 8], 5).unwrap()
    }

    #[test]
    fn matches_dense_forward() {
        let spec = small_spec();
        for (t, &p) in [0.0, 0.5, 0.9, 0.95].iter().enumerate() {
            let layers = random_layers(&spec, p, t as u64);
            let model = CompactModel::from_layers(&spec, &layers).unwrap();
            let eff: Vec<Tensor<f64>> = layers.iter().map(|l| l.effective_weights()).collect();
            assert_eq!(model.densify(), eff);
            let mut r = ChaCha8Rng::seed_from_u64(100 + t as u64);
            let x = Tensor::from_fn(&[4, 3, 8, 8], |_| r.random_range(-1.0..1.0));
            let dense = forward(&spec, &eff, &x).unwrap();
            let sparse = sparse_forward(&model, &x).unwrap();
            assert_eq!(dense, sparse, "p = {p}");
            assert_eq!(argmax_rows(&dense), argmax_rows(&sparse));
        }
    }

    #[test]
    fn counts_agree_with_analyzer() {
        let spec = small_spec();
        let layers = random_layers(&spec, 0.9, 7);
        let model = CompactModel::from_layers(&spec, &layers).unwrap();
        let masks: Vec<Mask> = layers.iter().map(|l| l.mask.clone()).collect();
        for (stored, census) in model.kernel_counts().iter().zip(count_zero_kernels(&masks)) {
            if let (Some(p), Some((zero, total))) = (stored, census) {
                assert_eq!(*p, total - zero);
            }
        }
        let (dense, sparse) = conv_macs(&spec, &masks).unwrap();
        assert_eq!(dense_mac_count(&spec).unwrap(), dense);
        assert_eq!(model.mac_count().unwrap(), sparse);
        assert_eq!(acceleration_rate(&spec, &masks).unwrap(), dense as f64 / sparse as f64);
    }

    #[test]
    fn channel_without_kernels_is_exactly_zero() {
        let spec = NetworkSpec::conv_family(Arch::Conv2, [2, 4, 4], 2).unwrap();
        let mut layers = random_layers(&spec, 0.0, 3);
        let first = &layers[0];
        let kk = 9 * 2;
        let mut bits = first.mask.bits().to_vec();
        bits[..kk].iter_mut().for_each(|b| *b = false);
        layers[0] = MaskedBinaryLayer::new(first.weights.clone(), Mask::from_bits(first.mask.shape(), bits).unwrap()).unwrap();
        let model = CompactModel::from_layers(&spec, &layers).unwrap();
        assert_eq!(model.kernel_counts()[0], Some(2 * 32 - 2));
        let CompactLayer::Conv(c) = &model.layers[0] else { panic!() };
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64 + 1.0);
        let pre = sparse_conv(&x, c).unwrap();
        assert!(pre.data()[..16].iter().all(|&v| v == 0.0));
        assert!(pre.data()[16..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mac_closed_forms() {
        let conv = ConvSpec {
            in_channels: 2,
            out_channels: 2,
            kernel_size: 3,
            stride: 1,
            padding: 1,
        };
        let spec = NetworkSpec {
            name: "one".into(),
            layers: vec![
                LayerSpec::Conv2d(conv),
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    in_features: 32,
                    out_features: 2,
                },
            ],
            input_shape: [2, 4, 4],
            num_classes: 2,
        };
        assert_eq!(dense_mac_count(&spec).unwrap(), 576);
        let bits: Vec<bool> = (0..36).map(|i| i / 9 == 1 || i / 9 == 2).collect();
        let layers = vec![
            MaskedBinaryLayer::new(Tensor::from_fn(&[2, 2, 3, 3], |_| 1.0), Mask::from_bits(&[2, 2, 3, 3], bits).unwrap()).unwrap(),
            MaskedBinaryLayer::new(Tensor::from_fn(&[2, 32], |_| 1.0), Mask::ones(&[2, 32])).unwrap(),
        ];
        assert_eq!(CompactModel::from_layers(&spec, &layers).unwrap().mac_count().unwrap(), 288);
    }

    #[test]
    fn bench_rejects_few_repeats() {
        let spec = small_spec();
        let model = CompactModel::from_layers(&spec, &random_layers(&spec, 0.5, 1)).unwrap();
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(bench_inference(&model, &x, 1).is_err());
        let b = bench_inference(&model, &x, 10).unwrap();
        assert!(b.theoretical_ar >= 1.0);
    }
}
