//! Efficient channel attention: global average pooling, a bias-free 1-D
//! convolution across channels, a sigmoid gate and per-channel rescaling.

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::tensor::{Scalar, Tensor};

/// Adaptive kernel length: the odd integer nearest to
/// `|log2(C) / gamma + b / gamma|`, the smaller one on exact ties, at least 1.
pub fn eca_kernel_size(channels: usize, gamma: usize, b: usize) -> usize {
    assert!(channels >= 1 && gamma >= 1, "eca_kernel_size needs C >= 1 and gamma >= 1");
    let v = ((channels as f64).log2() / gamma as f64 + b as f64 / gamma as f64).abs();
    let lower = ((v - 1.0) / 2.0).floor() * 2.0 + 1.0;
    let upper = lower + 2.0;
    let nearest = if v - lower <= upper - v { lower } else { upper };
    nearest.max(1.0) as usize
}

#[derive(Clone, Debug)]
pub struct EcaCache<T> {
    pooled: Vec<T>,
    attention: Vec<T>,
}

impl<T: Scalar> EcaCache<T> {
    /// Sigmoid gate per `(batch, channel)`.
    pub fn attention(&self) -> &[T] {
        &self.attention
    }
}

fn check_kernel<T: Scalar>(kernel: &Tensor<T>) -> Result<usize> {
    kernel.expect_rank("eca", 1)?;
    let r = kernel.len();
    if r.is_multiple_of(2) {
        return Err(Error::Config(format!("eca kernel length must be odd, got {r}")));
    }
    Ok(r)
}

/// `out = Z * sigmoid(conv1d(GAP(Z)))` over `[B, C, H, W]`.
pub fn eca_forward<T: Scalar>(z: &Tensor<T>, kernel: &Tensor<T>) -> Result<(Tensor<T>, EcaCache<T>)> {
    z.expect_rank("eca", 4)?;
    let r = check_kernel(kernel)?;
    let s = z.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let pad = (r - 1) / 2;
    let inv = T::of(1.0 / hw as f64);
    let pooled: Vec<T> = z.data().chunks(hw).map(|plane| plane.iter().copied().sum::<T>() * inv).collect();
    let k = kernel.data();
    let mut attention = vec![T::zero(); b * c];
    for bi in 0..b {
        let row = &pooled[bi * c..(bi + 1) * c];
        for ci in 0..c {
            let mut acc = T::zero();
            for (j, &kj) in k.iter().enumerate() {
                let src = ci as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < c {
                    acc += kj * row[src as usize];
                }
            }
            attention[bi * c + ci] = sigmoid(acc);
        }
    }
    let mut out = z.clone();
    for (plane, &a) in out.data_mut().chunks_mut(hw).zip(&attention) {
        plane.iter_mut().for_each(|v| *v *= a);
    }
    Ok((out, EcaCache { pooled, attention }))
}

/// Accumulates the kernel gradient (when requested) and returns the input
/// gradient when `want_input` is set.
pub fn eca_backward<T: Scalar>(
    cache: &EcaCache<T>,
    z: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    kernel_grad: Option<&mut Tensor<T>>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    let r = check_kernel(kernel)?;
    if grad_out.shape() != z.shape() {
        return Err(Error::shape("eca backward", format!("{:?} vs {:?}", grad_out.shape(), z.shape())));
    }
    let s = z.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let pad = (r - 1) / 2;
    // gradient w.r.t. the pre-sigmoid conv output
    let dy: Vec<T> = z
        .data()
        .chunks(hw)
        .zip(grad_out.data().chunks(hw))
        .zip(&cache.attention)
        .map(|((zp, gp), &a)| {
            let da: T = zp.iter().zip(gp).map(|(&x, &g)| x * g).sum();
            da * a * (T::one() - a)
        })
        .collect();
    if let Some(kg) = kernel_grad {
        let kg = kg.data_mut();
        for bi in 0..b {
            for ci in 0..c {
                let d = dy[bi * c + ci];
                for (j, g) in kg.iter_mut().enumerate() {
                    let src = ci as isize + j as isize - pad as isize;
                    if src >= 0 && (src as usize) < c {
                        *g += d * cache.pooled[bi * c + src as usize];
                    }
                }
            }
        }
    }
    if !want_input {
        return Ok(None);
    }
    let k = kernel.data();
    let inv = T::of(1.0 / hw as f64);
    let mut dz = Tensor::zeros(s);
    for bi in 0..b {
        for ci in 0..c {
            // pooled[ci] feeds output channel co through tap j = ci - co + pad
            let mut ds = T::zero();
            for (j, &kj) in k.iter().enumerate() {
                let co = ci as isize - j as isize + pad as isize;
                if co >= 0 && (co as usize) < c {
                    ds += kj * dy[bi * c + co as usize];
                }
            }
            let idx = bi * c + ci;
            let a = cache.attention[idx];
            let off = ds * inv;
            let plane = idx * hw;
            for p in 0..hw {
                dz.data_mut()[plane + p] = grad_out.data()[plane + p] * a + off;
            }
        }
    }
    Ok(Some(dz))
}
