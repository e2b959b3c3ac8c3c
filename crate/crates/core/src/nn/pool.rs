//! Non-overlapping max pooling.

use super::dims4;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_dims: [usize; 4],
    /// Flat input index of the winning cell for every output cell.
    argmax: Vec<u32>,
}

/// Windowed maximum over `pool_h x pool_w` tiles. Ties go to the first
/// maximal cell in row-major scan order.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    pool_h: usize,
    pool_w: usize,
) -> Result<(Tensor<T>, PoolCache)> {
    let [b, c, h, w] = dims4(input, "maxpool2d")?;
    if pool_h == 0 || pool_w == 0 || h % pool_h != 0 || w % pool_w != 0 {
        return Err(Error::Config(format!(
            "maxpool2d: {h}x{w} input is not divisible by {pool_h}x{pool_w} pool"
        )));
    }
    let (ho, wo) = (h / pool_h, w / pool_w);
    let x = input.data();
    let mut out = vec![T::zero(); b * c * ho * wo];
    let mut argmax = vec![0u32; b * c * ho * wo];
    let dims = [b * c, h, w];
    match (pool_h, pool_w) {
        (2, 2) => pool_tiles::<T, 2, 2>(x, dims, &mut out, &mut argmax),
        (2, 1) => pool_tiles::<T, 2, 1>(x, dims, &mut out, &mut argmax),
        (1, 2) => pool_tiles::<T, 1, 2>(x, dims, &mut out, &mut argmax),
        _ => pool_any(x, dims, pool_h, pool_w, &mut out, &mut argmax),
    }
    let out = Tensor::new(vec![b, c, ho, wo], out)?;
    Ok((
        out,
        PoolCache {
            input_dims: [b, c, h, w],
            argmax,
        },
    ))
}

/// Fixed-size tiles, unrolled by the compiler.
fn pool_tiles<T: Scalar, const PH: usize, const PW: usize>(
    x: &[T],
    [planes, h, w]: [usize; 3],
    out: &mut [T],
    argmax: &mut [u32],
) {
    let wo = w / PW;
    let mut o = 0;
    for plane in 0..planes {
        for top in (plane * h * w..(plane + 1) * h * w).step_by(PH * w) {
            for ow in 0..wo {
                let origin = top + ow * PW;
                let mut best = x[origin];
                let mut best_idx = origin;
                for i in 0..PH {
                    for j in 0..PW {
                        let idx = origin + i * w + j;
                        let v = x[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out[o] = best;
                argmax[o] = best_idx as u32;
                o += 1;
            }
        }
    }
}

fn pool_any<T: Scalar>(
    x: &[T],
    [planes, h, w]: [usize; 3],
    pool_h: usize,
    pool_w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let wo = w / pool_w;
    let mut o = 0;
    for plane in 0..planes {
        for top in (plane * h * w..(plane + 1) * h * w).step_by(pool_h * w) {
            for ow in 0..wo {
                let origin = top + ow * pool_w;
                let mut best = x[origin];
                let mut best_idx = origin;
                for i in 0..pool_h {
                    let row = origin + i * w;
                    for idx in row..row + pool_w {
                        // strict comparison keeps the first maximum
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[o] = best;
                argmax[o] = best_idx as u32;
                o += 1;
            }
        }
    }
}

pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, pool_h: usize, pool_w: usize) -> Result<Tensor<T>> {
    maxpool2d_forward(input, pool_h, pool_w).map(|(out, _)| out)
}

/// Routes each output gradient to its argmax cell.
pub fn maxpool2d_backward<T: Scalar>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool2d backward",
            format!("grad has {} values, pool produced {}", grad_out.len(), cache.argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(&cache.input_dims);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        d[idx as usize] += g;
    }
    Ok(dx)
}
