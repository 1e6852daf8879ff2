use crate::error::{Error, Result};
use crate::tensor::{dot, Real, Tensor};

fn dims<T: Real>(op: &'static str, input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank(op, "input", 2)?;
    weight.expect_rank(op, "weight", 2)?;
    let (b, i) = (input.shape()[0], input.shape()[1]);
    let (o, wi) = (weight.shape()[0], weight.shape()[1]);
    if wi != i {
        return Err(Error::shape(
            op,
            format!("input has {i} features but weight [{o}, {wi}] expects {wi}"),
        ));
    }
    Ok((b, i, o))
}

/// `y = x Wᵀ` for `x [B, in]`, `W [out, in]`.
pub fn linear_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, i, o) = dims("linear_forward", input, weight)?;
    let mut out = Tensor::zeros(&[b, o]);
    let x = input.data();
    let w = weight.data();
    for (bi, row) in out.data_mut().chunks_mut(o).enumerate() {
        let xr = &x[bi * i..(bi + 1) * i];
        for (oi, y) in row.iter_mut().enumerate() {
            *y = dot(xr, &w[oi * i..(oi + 1) * i]);
        }
    }
    Ok(out)
}

pub fn linear_backward_input<T: Real>(weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_rank("linear_backward", "grad_out", 2)?;
    let (b, o) = (grad_out.shape()[0], grad_out.shape()[1]);
    if weight.shape().len() != 2 || weight.shape()[0] != o {
        return Err(Error::shape(
            "linear_backward",
            format!("grad_out {:?} does not match weight {:?}", grad_out.shape(), weight.shape()),
        ));
    }
    let i = weight.shape()[1];
    let mut gi = Tensor::zeros(&[b, i]);
    let w = weight.data();
    let g = grad_out.data();
    for (bi, row) in gi.data_mut().chunks_mut(i).enumerate() {
        for oi in 0..o {
            let gv = g[bi * o + oi];
            for (dst, &wv) in row.iter_mut().zip(&w[oi * i..(oi + 1) * i]) {
                *dst += gv * wv;
            }
        }
    }
    Ok(gi)
}

pub fn linear_backward_weight<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_rank("linear_backward", "input", 2)?;
    grad_out.expect_rank("linear_backward", "grad_out", 2)?;
    let (b, i) = (input.shape()[0], input.shape()[1]);
    let o = grad_out.shape()[1];
    if grad_out.shape()[0] != b {
        return Err(Error::shape(
            "linear_backward",
            format!("batch {b} vs grad_out {:?}", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(&[o, i]);
    let x = input.data();
    let g = grad_out.data();
    for bi in 0..b {
        let xr = &x[bi * i..(bi + 1) * i];
        for (oi, row) in gw.data_mut().chunks_mut(i).enumerate() {
            let gv = g[bi * o + oi];
            for (dst, &xv) in row.iter_mut().zip(xr) {
                *dst += gv * xv;
            }
        }
    }
    Ok(gw)
}

/// Forward pass, plus `(grad_input, grad_weight)` when `grad_out` is given.
#[allow(clippy::type_complexity)]
pub fn linear_forward_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Option<(Tensor<T>, Tensor<T>)>)> {
    let out = linear_forward(input, weight)?;
    let grads = match grad_out {
        Some(g) => {
            g.expect_shape("linear_backward", out.shape())?;
            Some((linear_backward_input(weight, g)?, linear_backward_weight(input, g)?))
        }
        None => None,
    };
    Ok((out, grads))
}
