//! Score-based supermasks over frozen random weights.
//!
//! Raw scores `s` go through the power-propagation map `Ψ(s) = s·|s|^(α−1)`;
//! the effective scores `S = Ψ(s)` pick the mask, either by sorting (keep the
//! largest) or by comparing against a threshold. Kept weights are binarized to
//! `scale · sign(W)` where `scale` is the mean magnitude of the kept weights.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Binary keep/prune mask; `true` keeps the weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            bits: vec![true; shape.iter().product()],
        }
    }

    pub fn from_bits(shape: &[usize], bits: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(Error::shape(
                "mask",
                format!("shape {shape:?} vs {} bits", bits.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            bits,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// `‖M‖₁`
    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pruned(&self) -> usize {
        self.len() - self.kept()
    }
}

/// Fraction of masked-out entries across all layers.
pub fn prune_ratio(masks: &[Mask]) -> f64 {
    let total: usize = masks.iter().map(Mask::len).sum();
    let pruned: usize = masks.iter().map(Mask::pruned).sum();
    if total == 0 {
        0.0
    } else {
        pruned as f64 / total as f64
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || alpha < 1.0 || alpha.is_infinite() {
        return Err(Error::Config(format!("power-propagation exponent must be >= 1, got {alpha}")));
    }
    Ok(())
}

/// `Ψ(s) = s·|s|^(α−1)`, elementwise.
pub fn powerprop_apply<T: Real>(s: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let e = T::of(alpha - 1.0);
    Ok(s.map(|v| v * v.abs().powf(e)))
}

/// Chain rule through Ψ: `gs = gS · α·|s|^(α−1)`.
pub fn powerprop_grad<T: Real>(s: &Tensor<T>, grad_effective: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    grad_effective.expect_shape("powerprop_grad", s.shape())?;
    let a = T::of(alpha);
    let e = T::of(alpha - 1.0);
    let data = s
        .data()
        .iter()
        .zip(grad_effective.data())
        .map(|(&v, &g)| g * (a * v.abs().powf(e)))
        .collect();
    Tensor::from_vec(s.shape(), data)
}

/// Raw scores for every prunable layer plus the power-propagation exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreState<T> {
    pub scores: Vec<Tensor<T>>,
    pub alpha: f64,
}

impl<T: Real> ScoreState<T> {
    /// `S = Ψ(s)` for every layer.
    pub fn effective(&self) -> Result<Vec<Tensor<T>>> {
        self.scores.iter().map(|s| powerprop_apply(s, self.alpha)).collect()
    }
}

/// Raw scores i.i.d. uniform on `[−b, b]`, `b = sqrt(6 / fan_in)`.
pub fn init_scores<T: Real>(spec: &NetworkSpec, alpha: f64, seed: u64) -> Result<ScoreState<T>> {
    init_scores_bounded(spec, alpha, seed, None)
}

/// [`init_scores`] with an optional bound `b` shared by every layer.
///
/// Global ranking compares raw values across layers, so under the fan-in
/// bound the widest layers hold the smallest scores and are pruned first.
pub fn init_scores_bounded<T: Real>(spec: &NetworkSpec, alpha: f64, seed: u64, bound: Option<f64>) -> Result<ScoreState<T>> {
    check_alpha(alpha)?;
    if let Some(b) = bound {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!("score bound must be positive, got {b}")));
        }
    }
    let scores = spec
        .prunable_layers()
        .iter()
        .enumerate()
        .map(|(j, layer)| {
            let bound = bound.unwrap_or_else(|| (6.0 / layer.fan_in as f64).sqrt());
            let mut r = rng::stream(seed, rng::streams::SCORES, j as u64);
            Tensor::from_fn(&layer.weight_shape, |_| T::of(r.random_range(-bound..=bound)))
        })
        .collect();
    Ok(ScoreState { scores, alpha })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Global,
    Layerwise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionMethod {
    /// Prune the `floor(p·n)` lowest scores.
    TopK { prune_ratio: f64 },
    /// Keep scores strictly above `theta`.
    Threshold { theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionPolicy {
    pub method: SelectionMethod,
    pub scope: Scope,
}

impl SelectionPolicy {
    pub fn topk(prune_ratio: f64, scope: Scope) -> Self {
        Self {
            method: SelectionMethod::TopK { prune_ratio },
            scope,
        }
    }

    pub fn threshold(theta: f64) -> Self {
        Self {
            method: SelectionMethod::Threshold { theta },
            scope: Scope::Global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            SelectionMethod::TopK { prune_ratio } => check_ratio(prune_ratio),
            SelectionMethod::Threshold { theta } if theta.is_nan() => {
                Err(Error::Config("threshold must not be NaN".into()))
            }
            SelectionMethod::Threshold { .. } => Ok(()),
        }
    }

    pub fn select<T: Real>(&self, scores: &[Tensor<T>]) -> Result<Vec<Mask>> {
        match self.method {
            SelectionMethod::TopK { prune_ratio } => select_mask_topk(scores, prune_ratio, self.scope),
            SelectionMethod::Threshold { theta } => Ok(select_mask_threshold(scores, T::of(theta)).0),
        }
    }
}

fn check_ratio(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("prune ratio must lie in [0, 1), got {p}")));
    }
    Ok(())
}

fn prune_count(p: f64, n: usize) -> usize {
    ((p * n as f64).floor() as usize).min(n)
}

/// Sort-based selection: within the population (whole network or each
/// layer), prune the `floor(p·n)` smallest scores. Ties prune the lower layer,
/// then the lower flat index, first.
pub fn select_mask_topk<T: Real>(scores: &[Tensor<T>], prune_ratio: f64, scope: Scope) -> Result<Vec<Mask>> {
    check_ratio(prune_ratio)?;
    let mut masks: Vec<Mask> = scores.iter().map(|s| Mask::ones(s.shape())).collect();
    let mut prune_lowest = |keys: &mut Vec<(T, u32, u32)>, count: usize| {
        keys.sort_unstable_by(|a, b| a.0.total_order(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, layer, idx) in &keys[..count] {
            masks[layer as usize].bits[idx as usize] = false;
        }
    };
    match scope {
        Scope::Global => {
            let n: usize = scores.iter().map(Tensor::len).sum();
            let mut keys = Vec::with_capacity(n);
            for (j, s) in scores.iter().enumerate() {
                keys.extend(s.data().iter().enumerate().map(|(i, &v)| (v, j as u32, i as u32)));
            }
            prune_lowest(&mut keys, prune_count(prune_ratio, n));
        }
        Scope::Layerwise => {
            for (j, s) in scores.iter().enumerate() {
                let mut keys: Vec<_> = s.data().iter().enumerate().map(|(i, &v)| (v, j as u32, i as u32)).collect();
                prune_lowest(&mut keys, prune_count(prune_ratio, s.len()));
            }
        }
    }
    Ok(masks)
}

/// Single-pass selection: keep iff `S > theta`. Returns the masks and the
/// prune ratio they happen to achieve.
pub fn select_mask_threshold<T: Real>(scores: &[Tensor<T>], theta: T) -> (Vec<Mask>, f64) {
    let masks: Vec<Mask> = scores
        .iter()
        .map(|s| Mask {
            shape: s.shape().to_vec(),
            bits: s.data().iter().map(|&v| v > theta).collect(),
        })
        .collect();
    let ratio = prune_ratio(&masks);
    (masks, ratio)
}

/// Threshold that makes [`select_mask_threshold`] prune the same
/// `floor(p·n)` entries as global top-k on tie-free scores: the largest score
/// that top-k would prune, or `−∞` when nothing is pruned. Sorts once.
pub fn calibrate_threshold<T: Real>(scores: &[Tensor<T>], prune_ratio: f64) -> Result<T> {
    check_ratio(prune_ratio)?;
    let mut all: Vec<T> = scores.iter().flat_map(|s| s.data().iter().copied()).collect();
    let count = prune_count(prune_ratio, all.len());
    if count == 0 {
        return Ok(T::neg_infinity());
    }
    let (_, nth, _) = all.select_nth_unstable_by(count - 1, T::total_order);
    Ok(*nth)
}

/// `sign` with `sign(0) = +1`.
fn sign<T: Real>(v: T) -> T {
    if v < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// Binarization scale (mean magnitude of kept weights) and `scale·sign(W)`.
pub fn binarize_layer<T: Real>(weights: &Tensor<T>, mask: &Mask) -> Result<(T, Tensor<T>)> {
    if weights.shape() != mask.shape() {
        return Err(Error::shape(
            "binarize_layer",
            format!("weights {:?} vs mask {:?}", weights.shape(), mask.shape()),
        ));
    }
    let kept = mask.kept();
    if kept == 0 {
        return Err(Error::Config("layer fully pruned: binarization scale divides by ‖M‖₁ = 0".into()));
    }
    let l1: f64 = weights
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|(w, _)| w.abs().as_f64())
        .sum();
    let scale = T::of(l1 / kept as f64);
    Ok((scale, weights.map(|w| scale * sign(w))))
}

/// Latent weights with their mask and binarized form.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBinaryLayer<T> {
    pub weights: Tensor<T>,
    pub mask: Mask,
    pub scale: T,
    pub binarized: Tensor<T>,
}

impl<T: Real> MaskedBinaryLayer<T> {
    pub fn new(weights: Tensor<T>, mask: Mask) -> Result<Self> {
        let (scale, binarized) = binarize_layer(&weights, &mask)?;
        Ok(Self {
            weights,
            mask,
            scale,
            binarized,
        })
    }

    pub fn effective_weights(&self) -> Tensor<T> {
        effective_weights(self)
    }
}

/// `W_b ⊙ M`, the only weights a masked binary network computes with.
pub fn effective_weights<T: Real>(layer: &MaskedBinaryLayer<T>) -> Tensor<T> {
    let data = layer
        .binarized
        .data()
        .iter()
        .zip(layer.mask.bits())
        .map(|(&w, &m)| if m { w } else { T::zero() })
        .collect();
    Tensor::from_vec(layer.binarized.shape(), data).expect("mask shape checked at construction")
}

/// Straight-through score gradient `grad_eff ⊙ W_b`: the mask acts as the
/// identity in the backward pass, so pruned scores are trained too.
pub fn score_gradient<T: Real>(grad_eff: &Tensor<T>, binarized: &Tensor<T>) -> Result<Tensor<T>> {
    grad_eff.expect_shape("score_gradient", binarized.shape())?;
    let data = grad_eff
        .data()
        .iter()
        .zip(binarized.data())
        .map(|(&g, &w)| g * w)
        .collect();
    Tensor::from_vec(grad_eff.shape(), data)
}
