//! Whole-network forward and backward passes over a [`NetworkSpec`], given
//! one weight tensor per prunable layer.

use crate::error::{Error, Result};
use crate::nn::activation::{flatten, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward};
use crate::nn::conv::{conv2d_backward_input, conv2d_backward_weight, conv2d_forward};
use crate::nn::linear::{linear_backward_input, linear_backward_weight, linear_forward};
use crate::nn::spec::{LayerSpec, NetworkSpec};
use crate::tensor::{Real, Tensor};

/// Activations recorded by [`forward_traced`] for the backward pass.
pub struct Trace<T> {
    /// Input of every layer, in layer order.
    inputs: Vec<Tensor<T>>,
    /// Argmax routes of each max-pool layer, `None` elsewhere.
    routes: Vec<Option<Vec<usize>>>,
}

fn check_weights<T: Real>(spec: &NetworkSpec, weights: &[Tensor<T>]) -> Result<()> {
    let layers = spec.prunable_layers();
    if layers.len() != weights.len() {
        return Err(Error::shape(
            "network",
            format!("{} weight tensors for {} prunable layers", weights.len(), layers.len()),
        ));
    }
    for (j, (layer, w)) in layers.iter().zip(weights).enumerate() {
        if w.shape() != layer.weight_shape.as_slice() {
            return Err(Error::shape(
                "network",
                format!("layer {j} weight {:?}, expected {:?}", w.shape(), layer.weight_shape),
            ));
        }
    }
    Ok(())
}

fn check_input<T: Real>(spec: &NetworkSpec, input: &Tensor<T>) -> Result<()> {
    if input.shape().len() != 4 || input.shape()[1..] != spec.input_shape {
        return Err(Error::shape(
            "network",
            format!("input {:?} does not match [B, {:?}]", input.shape(), spec.input_shape),
        ));
    }
    Ok(())
}

fn step<T: Real>(
    layer: &LayerSpec,
    x: Tensor<T>,
    weights: &mut std::slice::Iter<'_, Tensor<T>>,
) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
    Ok(match layer {
        LayerSpec::Conv2d(c) => {
            let w = weights.next().expect("weights checked");
            (conv2d_forward(&x, w, c.stride, c.padding)?, None)
        }
        LayerSpec::Linear { .. } => {
            let w = weights.next().expect("weights checked");
            (linear_forward(&x, w)?, None)
        }
        LayerSpec::Relu => (relu_forward(&x), None),
        LayerSpec::MaxPool2x2 => {
            let (y, routes) = maxpool2x2_forward(&x)?;
            (y, Some(routes))
        }
        LayerSpec::Flatten => (flatten(x)?, None),
    })
}

/// Logits for a batch `[B, C, H, W]`.
pub fn forward<T: Real>(spec: &NetworkSpec, weights: &[Tensor<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    check_weights(spec, weights)?;
    check_input(spec, input)?;
    let mut it = weights.iter();
    let mut x = input.clone();
    for layer in &spec.layers {
        x = step(layer, x, &mut it)?.0;
    }
    Ok(x)
}

pub fn forward_traced<T: Real>(
    spec: &NetworkSpec,
    weights: &[Tensor<T>],
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Trace<T>)> {
    check_weights(spec, weights)?;
    check_input(spec, input)?;
    let mut it = weights.iter();
    let mut inputs = Vec::with_capacity(spec.layers.len());
    let mut routes = Vec::with_capacity(spec.layers.len());
    let mut x = input.clone();
    for layer in &spec.layers {
        inputs.push(x.clone());
        let (y, r) = step(layer, x, &mut it)?;
        routes.push(r);
        x = y;
    }
    Ok((x, Trace { inputs, routes }))
}

/// Weight gradients for the prunable layers flagged in `wanted`.
///
/// Propagation stops below the lowest wanted layer, so requesting only the
/// classifier head costs a single linear backward.
pub fn backward<T: Real>(
    spec: &NetworkSpec,
    weights: &[Tensor<T>],
    trace: &Trace<T>,
    grad_logits: &Tensor<T>,
    wanted: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    check_weights(spec, weights)?;
    if wanted.len() != weights.len() {
        return Err(Error::shape(
            "network backward",
            format!("{} flags for {} prunable layers", wanted.len(), weights.len()),
        ));
    }
    let prunable = spec.prunable_layers();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; weights.len()];
    let Some(lowest) = wanted.iter().position(|&w| w) else {
        return Ok(grads);
    };
    let stop_at = prunable[lowest].layer_index;

    let mut g = grad_logits.clone();
    let mut j = weights.len();
    for (li, layer) in spec.layers.iter().enumerate().rev() {
        let x = &trace.inputs[li];
        let need_input_grad = li > stop_at;
        match layer {
            LayerSpec::Conv2d(c) => {
                j -= 1;
                if wanted[j] {
                    grads[j] = Some(conv2d_backward_weight(x, weights[j].shape(), &g, c.stride, c.padding)?);
                }
                if need_input_grad {
                    g = conv2d_backward_input(x.shape(), &weights[j], &g, c.stride, c.padding)?;
                }
            }
            LayerSpec::Linear { .. } => {
                j -= 1;
                if wanted[j] {
                    grads[j] = Some(linear_backward_weight(x, &g)?);
                }
                if need_input_grad {
                    g = linear_backward_input(&weights[j], &g)?;
                }
            }
            LayerSpec::Relu => g = relu_backward(x, &g)?,
            LayerSpec::MaxPool2x2 => {
                let routes = trace.routes[li].as_ref().expect("pool routes recorded");
                g = maxpool2x2_backward(x.shape(), routes, &g)?;
            }
            LayerSpec::Flatten => g = g.reshape(x.shape())?,
        }
        if !need_input_grad {
            break;
        }
    }
    Ok(grads)
}

/// Index of the largest logit per row; ties go to the lowest class.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
