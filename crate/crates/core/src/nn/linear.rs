//! Affine map `y = x W^T + b` over row vectors.

use super::expect_shape;
use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

/// `input` is `[N, Din]`, `weight` is `[Dout, Din]`, `bias` is `[Dout]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_rank("linear", 2)?;
    weight.expect_rank("linear", 2)?;
    let (n, din) = (input.shape()[0], input.shape()[1]);
    let dout = weight.shape()[0];
    if weight.shape()[1] != din {
        return Err(Error::shape(
            "linear",
            format!("input width {din} does not match weight {:?}", weight.shape()),
        ));
    }
    expect_shape(bias, "linear", "bias", &[dout])?;
    let mut out = Tensor::zeros(&[n, dout]);
    for row in out.data_mut().chunks_mut(dout) {
        row.copy_from_slice(bias.data());
    }
    matmul(input.data(), false, weight.data(), true, out.data_mut(), n, din, dout, true);
    Ok(out)
}

/// Accumulates weight/bias gradients (when requested) and returns the input
/// gradient when `want_input` is set.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (n, din) = (input.shape()[0], input.shape()[1]);
    let dout = weight.shape()[0];
    expect_shape(grad_out, "linear backward", "grad", &[n, dout])?;
    if let Some((gw, gb)) = param_grads {
        matmul(grad_out.data(), true, input.data(), false, gw.data_mut(), dout, n, din, true);
        for row in grad_out.data().chunks(dout) {
            for (b, &g) in gb.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    if !want_input {
        return Ok(None);
    }
    let mut dx = Tensor::zeros(&[n, din]);
    matmul(grad_out.data(), false, weight.data(), false, dx.data_mut(), n, dout, din, false);
    Ok(Some(dx))
}
