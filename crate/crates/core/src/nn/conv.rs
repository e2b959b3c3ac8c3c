//! 2-D cross-correlation via im2col and GEMM.

use super::{dims4, expect_shape};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

/// Forward-pass state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Conv2dCache<T> {
    /// im2col buffers, one `[Cin*kh*kw, Ho*Wo]` block per batch item.
    cols: Vec<T>,
    input_dims: [usize; 4],
    weight_dims: [usize; 4],
    out_hw: (usize, usize),
    spec: Conv2dSpec,
}

struct Geometry {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Geometry> {
    let [b, cin, h, w] = dims4(input, "conv2d")?;
    let [cout, wcin, kh, kw] = dims4(weight, "conv2d")?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weight expects {wcin}"),
        ));
    }
    expect_shape(bias, "conv2d", "bias", &[cout])?;
    if spec.stride == 0 {
        return Err(Error::Config("conv2d stride must be >= 1".into()));
    }
    let (ph, pw) = (h + 2 * spec.padding, w + 2 * spec.padding);
    if kh > ph || kw > pw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit padded input {ph}x{pw}"),
        ));
    }
    Ok(Geometry {
        b,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho: (ph - kh) / spec.stride + 1,
        wo: (pw - kw) / spec.stride + 1,
    })
}

/// For stride 1 and kernel column `j`: the output columns `lo..hi` whose
/// input column `ow + j - padding` is in range, plus `j` (so the input slice
/// is `lo + j - padding .. hi + j - padding`).
fn unit_stride_span(j: usize, padding: usize, w: usize, wo: usize) -> (usize, usize, usize) {
    let lo = padding.saturating_sub(j);
    let hi = (w + padding).saturating_sub(j).min(wo).max(lo);
    (lo, hi, j)
}

/// Appends the im2col matrix `[Cin*kh*kw, Ho*Wo]` of one image to `cols`.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, spec: Conv2dSpec, cols: &mut Vec<T>) {
    let pad = spec.padding as isize;
    let zeros = |cols: &mut Vec<T>, n: usize| cols.extend(std::iter::repeat_n(T::zero(), n));
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                for oh in 0..g.ho {
                    let ih = (oh * spec.stride + i) as isize - pad;
                    if ih < 0 || ih >= g.h as isize {
                        zeros(cols, g.wo);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    if spec.stride == 1 {
                        let (lo, hi, off) = unit_stride_span(j, spec.padding, g.w, g.wo);
                        zeros(cols, lo);
                        cols.extend_from_slice(&src[lo + off - spec.padding..hi + off - spec.padding]);
                        zeros(cols, g.wo - hi);
                        continue;
                    }
                    cols.extend((0..g.wo).map(|ow| {
                        let iw = (ow * spec.stride + j) as isize - pad;
                        if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        }
                    }));
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, spec: Conv2dSpec, dx: &mut [T]) {
    let hw_out = g.ho * g.wo;
    let pad = spec.padding as isize;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oh in 0..g.ho {
                    let ih = (oh * spec.stride + i) as isize - pad;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    if spec.stride == 1 {
                        let (lo, hi, off) = unit_stride_span(j, spec.padding, g.w, g.wo);
                        let src_row = &src[oh * g.wo + lo..oh * g.wo + hi];
                        let dst_row = &mut dst[lo + off - spec.padding..hi + off - spec.padding];
                        for (d, &v) in dst_row.iter_mut().zip(src_row) {
                            *d += v;
                        }
                        continue;
                    }
                    for ow in 0..g.wo {
                        let iw = (ow * spec.stride + j) as isize - pad;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass returning the `[B, Cout, Ho, Wo]` output and the cache.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let g = geometry(input, weight, bias, spec)?;
    let k = g.cin * g.kh * g.kw;
    let hw_out = g.ho * g.wo;
    let in_stride = g.cin * g.h * g.w;
    let mut cols = Vec::with_capacity(g.b * k * hw_out);
    let mut out = Vec::with_capacity(g.b * g.cout * hw_out);
    for bi in 0..g.b {
        im2col(&input.data()[bi * in_stride..(bi + 1) * in_stride], &g, spec, &mut cols);
        for &bv in bias.data() {
            out.extend(std::iter::repeat_n(bv, hw_out));
        }
        let col = &cols[bi * k * hw_out..(bi + 1) * k * hw_out];
        let dst = &mut out[bi * g.cout * hw_out..(bi + 1) * g.cout * hw_out];
        matmul(weight.data(), false, col, false, dst, g.cout, k, hw_out, true);
    }
    let out = Tensor::new(vec![g.b, g.cout, g.ho, g.wo], out)?;
    let cache = Conv2dCache {
        cols,
        input_dims: [g.b, g.cin, g.h, g.w],
        weight_dims: [g.cout, g.cin, g.kh, g.kw],
        out_hw: (g.ho, g.wo),
        spec,
    };
    Ok((out, cache))
}

/// Forward pass without a cache.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    conv2d_forward(input, weight, bias, spec).map(|(out, _)| out)
}

/// Accumulates weight/bias gradients into `param_grads` (when given) and
/// returns the input gradient when `want_input` is set.
pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    let [b, cin, h, w] = cache.input_dims;
    let [cout, _, kh, kw] = cache.weight_dims;
    let (ho, wo) = cache.out_hw;
    expect_shape(weight, "conv2d backward", "weight", &cache.weight_dims)?;
    expect_shape(grad_out, "conv2d backward", "grad", &[b, cout, ho, wo])?;
    let g = Geometry {
        b,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
    };
    let k = cin * kh * kw;
    let hw_out = ho * wo;
    if let Some((gw, gb)) = param_grads {
        for bi in 0..b {
            let dy = &grad_out.data()[bi * cout * hw_out..(bi + 1) * cout * hw_out];
            let col = &cache.cols[bi * k * hw_out..(bi + 1) * k * hw_out];
            matmul(dy, false, col, true, gw.data_mut(), cout, hw_out, k, true);
            for (co, row) in dy.chunks(hw_out).enumerate() {
                gb.data_mut()[co] += row.iter().copied().sum::<T>();
            }
        }
    }
    if !want_input {
        return Ok(None);
    }
    let mut dx = Tensor::zeros(&[b, cin, h, w]);
    let mut dcols = vec![T::zero(); k * hw_out];
    let in_stride = cin * h * w;
    for bi in 0..b {
        let dy = &grad_out.data()[bi * cout * hw_out..(bi + 1) * cout * hw_out];
        matmul(weight.data(), true, dy, false, &mut dcols, k, cout, hw_out, false);
        col2im(
            &dcols,
            &g,
            cache.spec,
            &mut dx.data_mut()[bi * in_stride..(bi + 1) * in_stride],
        );
    }
    Ok(Some(dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct six-nested-loop cross-correlation.
    fn naive(x: &Tensor<f64>, wt: &Tensor<f64>, bias: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [b, cin, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [cout, _, kh, kw] = [wt.shape()[0], wt.shape()[1], wt.shape()[2], wt.shape()[3]];
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        for bi in 0..b {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = bias.data()[co];
                        for ci in 0..cin {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ih = (oh * stride + i) as isize - pad as isize;
                                    let iw = (ow * stride + j) as isize - pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                        acc += x.data()[((bi * cin + ci) * h + ih as usize) * w + iw as usize]
                                            * wt.data()[((co * cin + ci) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, Conv2dSpec::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 5, 6], &mut rng);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let b = Tensor::full(&[4], 0.25);
        let y = conv2d(&x, &w, &b, Conv2dSpec { stride: 1, padding: 1 }).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 2, 5, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            let y = conv2d(&x, &w, &b, Conv2dSpec { stride, padding: pad }).unwrap();
            let want = naive(&x, &w, &b, stride, pad);
            assert_eq!(y.shape(), want.shape());
            for (a, e) in y.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(matches!(
            conv2d(&x, &w, &b, Conv2dSpec::default()),
            Err(Error::Shape { .. })
        ));
        let w = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        assert!(conv2d(&x, &w, &b, Conv2dSpec::default()).is_err());
        assert!(conv2d(&x, &w, &b, Conv2dSpec { stride: 1, padding: 1 }).is_ok());
        assert!(conv2d(&x, &w, &b, Conv2dSpec { stride: 0, padding: 1 }).is_err());
    }
}
