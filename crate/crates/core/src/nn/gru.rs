//! Single-layer bidirectional GRU with backpropagation through time.
//!
//! Gate layout follows the common `[reset, update, new]` stacking:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use super::{expect_shape, sigmoid};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

/// Borrowed weights of one direction: `w_ih [3H, Din]`, `w_hh [3H, H]`,
/// `b_ih [3H]`, `b_hh [3H]`.
#[derive(Clone, Copy)]
pub struct GruWeights<'a, T: Scalar> {
    pub w_ih: &'a Tensor<T>,
    pub w_hh: &'a Tensor<T>,
    pub b_ih: &'a Tensor<T>,
    pub b_hh: &'a Tensor<T>,
}

/// Gradient accumulators for one direction.
pub struct GruGrads<'a, T: Scalar> {
    pub w_ih: &'a mut Tensor<T>,
    pub w_hh: &'a mut Tensor<T>,
    pub b_ih: &'a mut Tensor<T>,
    pub b_hh: &'a mut Tensor<T>,
}

impl<T: Scalar> GruWeights<'_, T> {
    fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    fn validate(&self, din: usize) -> Result<usize> {
        self.w_hh.expect_rank("bigru", 2)?;
        let h = self.hidden();
        expect_shape(self.w_ih, "bigru", "w_ih", &[3 * h, din])?;
        expect_shape(self.w_hh, "bigru", "w_hh", &[3 * h, h])?;
        expect_shape(self.b_ih, "bigru", "b_ih", &[3 * h])?;
        expect_shape(self.b_hh, "bigru", "b_hh", &[3 * h])?;
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct DirCache<T> {
    /// Hidden state entering each processing step, `[T, B, H]`.
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    ghn: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BiGruCache<T: Scalar> {
    input: Tensor<T>,
    hidden: usize,
    dirs: [DirCache<T>; 2],
}

fn time_index(step: usize, steps: usize, reverse: bool) -> usize {
    if reverse {
        steps - 1 - step
    } else {
        step
    }
}

fn run_direction<T: Scalar>(
    input: &Tensor<T>,
    wts: GruWeights<'_, T>,
    reverse: bool,
    out: &mut [T],
    out_offset: usize,
) -> DirCache<T> {
    let (steps, batch, din) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let h = wts.hidden();
    let g3 = 3 * h;
    // Input projections for every frame at once.
    let mut gi = vec![T::zero(); steps * batch * g3];
    for row in gi.chunks_mut(g3) {
        row.copy_from_slice(wts.b_ih.data());
    }
    matmul(input.data(), false, wts.w_ih.data(), true, &mut gi, steps * batch, din, g3, true);

    let cells = steps * batch * h;
    let mut cache = DirCache {
        h_prev: vec![T::zero(); cells],
        r: vec![T::zero(); cells],
        z: vec![T::zero(); cells],
        n: vec![T::zero(); cells],
        ghn: vec![T::zero(); cells],
    };
    let mut state = vec![T::zero(); batch * h];
    let mut gh = vec![T::zero(); batch * g3];
    for s in 0..steps {
        let t = time_index(s, steps, reverse);
        for row in gh.chunks_mut(g3) {
            row.copy_from_slice(wts.b_hh.data());
        }
        matmul(&state, false, wts.w_hh.data(), true, &mut gh, batch, h, g3, true);
        for b in 0..batch {
            let gi_row = &gi[(t * batch + b) * g3..(t * batch + b + 1) * g3];
            let gh_row = &gh[b * g3..(b + 1) * g3];
            let base = (s * batch + b) * h;
            for j in 0..h {
                let hp = state[b * h + j];
                let r = sigmoid(gi_row[j] + gh_row[j]);
                let z = sigmoid(gi_row[h + j] + gh_row[h + j]);
                let ghn = gh_row[2 * h + j];
                let n = (gi_row[2 * h + j] + r * ghn).tanh();
                let hn = (T::one() - z) * n + z * hp;
                cache.h_prev[base + j] = hp;
                cache.r[base + j] = r;
                cache.z[base + j] = z;
                cache.n[base + j] = n;
                cache.ghn[base + j] = ghn;
                state[b * h + j] = hn;
                out[(t * batch + b) * 2 * h + out_offset + j] = hn;
            }
        }
    }
    cache
}

/// Forward pass over `[T, B, Din]`, returning `[T, B, 2H]` (forward
/// direction features first) plus the cache.
pub fn bigru_forward<T: Scalar>(
    input: &Tensor<T>,
    fwd: GruWeights<'_, T>,
    bwd: GruWeights<'_, T>,
) -> Result<(Tensor<T>, BiGruCache<T>)> {
    input.expect_rank("bigru", 3)?;
    let (steps, batch, din) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if steps == 0 {
        return Err(Error::EmptySequence("bigru"));
    }
    let h = fwd.validate(din)?;
    if bwd.validate(din)? != h {
        return Err(Error::shape("bigru", "directions disagree on hidden size"));
    }
    let mut out = vec![T::zero(); steps * batch * 2 * h];
    let c_fwd = run_direction(input, fwd, false, &mut out, 0);
    let c_bwd = run_direction(input, bwd, true, &mut out, h);
    Ok((
        Tensor::new(vec![steps, batch, 2 * h], out)?,
        BiGruCache {
            input: input.clone(),
            hidden: h,
            dirs: [c_fwd, c_bwd],
        },
    ))
}

pub fn bigru<T: Scalar>(
    input: &Tensor<T>,
    fwd: GruWeights<'_, T>,
    bwd: GruWeights<'_, T>,
) -> Result<Tensor<T>> {
    bigru_forward(input, fwd, bwd).map(|(out, _)| out)
}

fn backward_direction<T: Scalar>(
    cache: &BiGruCache<T>,
    dir: usize,
    wts: GruWeights<'_, T>,
    grad_out: &Tensor<T>,
    grads: Option<GruGrads<'_, T>>,
    dx: Option<&mut [T]>,
) {
    let input = &cache.input;
    let (steps, batch, din) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let h = cache.hidden;
    let g3 = 3 * h;
    let c = &cache.dirs[dir];
    let reverse = dir == 1;
    let mut dgi = vec![T::zero(); steps * batch * g3];
    let mut dgh = vec![T::zero(); batch * g3];
    let mut dh = vec![T::zero(); batch * h];
    let mut dh_prev = vec![T::zero(); batch * h];
    let mut grads = grads;
    for s in (0..steps).rev() {
        let t = time_index(s, steps, reverse);
        for b in 0..batch {
            let go = &grad_out.data()[(t * batch + b) * 2 * h + dir * h..][..h];
            let base = (s * batch + b) * h;
            let dgi_row = &mut dgi[(t * batch + b) * g3..(t * batch + b + 1) * g3];
            let dgh_row = &mut dgh[b * g3..(b + 1) * g3];
            for j in 0..h {
                let d = dh[b * h + j] + go[j];
                let (r, z, n, ghn, hp) = (c.r[base + j], c.z[base + j], c.n[base + j], c.ghn[base + j], c.h_prev[base + j]);
                let dn = d * (T::one() - z);
                let dz = d * (hp - n);
                let dn_pre = dn * (T::one() - n * n);
                let dr = dn_pre * ghn;
                let dr_pre = dr * r * (T::one() - r);
                let dz_pre = dz * z * (T::one() - z);
                dgi_row[j] = dr_pre;
                dgi_row[h + j] = dz_pre;
                dgi_row[2 * h + j] = dn_pre;
                dgh_row[j] = dr_pre;
                dgh_row[h + j] = dz_pre;
                dgh_row[2 * h + j] = dn_pre * r;
                dh_prev[b * h + j] = d * z;
            }
        }
        matmul(&dgh, false, wts.w_hh.data(), false, &mut dh_prev, batch, g3, h, true);
        if let Some(g) = grads.as_mut() {
            let hp = &c.h_prev[s * batch * h..(s + 1) * batch * h];
            matmul(&dgh, true, hp, false, g.w_hh.data_mut(), g3, batch, h, true);
            for row in dgh.chunks(g3) {
                for (acc, &v) in g.b_hh.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
    if let Some(g) = grads {
        matmul(&dgi, true, input.data(), false, g.w_ih.data_mut(), g3, steps * batch, din, true);
        for row in dgi.chunks(g3) {
            for (acc, &v) in g.b_ih.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    if let Some(dx) = dx {
        matmul(&dgi, false, wts.w_ih.data(), false, dx, steps * batch, g3, din, true);
    }
}

/// Backpropagation through time for both directions. Parameter gradients
/// are accumulated when `grads` is given; the input gradient is returned
/// when `want_input` is set.
pub fn bigru_backward<T: Scalar>(
    cache: &BiGruCache<T>,
    fwd: GruWeights<'_, T>,
    bwd: GruWeights<'_, T>,
    grad_out: &Tensor<T>,
    grads: Option<(GruGrads<'_, T>, GruGrads<'_, T>)>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    let s = cache.input.shape();
    expect_shape(grad_out, "bigru backward", "grad", &[s[0], s[1], 2 * cache.hidden])?;
    let mut dx = want_input.then(|| Tensor::zeros(s));
    let (gf, gb) = match grads {
        Some((f, b)) => (Some(f), Some(b)),
        None => (None, None),
    };
    backward_direction(cache, 0, fwd, grad_out, gf, dx.as_mut().map(|t| t.data_mut()));
    backward_direction(cache, 1, bwd, grad_out, gb, dx.as_mut().map(|t| t.data_mut()));
    Ok(dx)
}
