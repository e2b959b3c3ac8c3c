//! Seeded finite-difference checks for every layer and for the whole
//! recognizer with CTC on top. Shared by the core test suite and the
//! acceptance harness.

use pfedcr_core::ctc::LabelSeq;
use pfedcr_core::gradcheck::{grad_check, GradReport};
use pfedcr_core::model::{eca_backward, eca_forward, Crnn, ModelConfig};
use pfedcr_core::nn::{
    bigru_backward, bigru_forward, conv2d_backward, conv2d_forward, linear, linear_backward, maxpool2d_backward,
    maxpool2d_forward, Conv2dSpec, GruGrads, GruWeights,
};
use pfedcr_core::{Group, GroupSet, Param, ParamSet, Result, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONFIGS_PER_LAYER: u64 = 20;
pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-3;

pub const LAYERS: [&str; 6] = ["conv2d", "maxpool2d", "linear", "bigru", "eca", "crnn+ctc"];

#[derive(Clone, Debug)]
pub struct Outcome {
    pub layer: &'static str,
    pub seed: u64,
    pub report: GradReport,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn param(name: &str, value: Tensor<f64>) -> Param<f64> {
    Param::new(name, Group::Body, value)
}

/// `sum(out * probe)`: a random linear read-out, so its gradient w.r.t.
/// `out` is the probe itself.
fn project(out: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
    out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

fn add_into(dst: &mut Tensor<f64>, src: &Tensor<f64>) {
    dst.data_mut().iter_mut().zip(src.data()).for_each(|(d, s)| *d += s);
}

fn conv_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let spec = Conv2dSpec { stride: rng.random_range(1..=2), padding: rng.random_range(0..=1) };
    let (h, w) = (rng.random_range(kh.max(2)..=6), rng.random_range(kw.max(2)..=6));
    let mut ps = ParamSet::new(vec![
        param("x", random(&[b, cin, h, w], &mut rng)),
        param("w", random(&[cout, cin, kh, kw], &mut rng)),
        param("b", random(&[cout], &mut rng)),
    ])?;
    let out_shape = conv2d_forward(&ps.get(0).value, &ps.get(1).value, &ps.get(2).value, spec)?.0.shape().to_vec();
    let probe = random(&out_shape, &mut rng);
    grad_check(
        |ps| {
            let (v, g) = ps.split_values_grads();
            let (out, cache) = conv2d_forward(v[0], v[1], v[2], spec)?;
            let [gx, gw, gb]: [&mut Tensor<f64>; 3] = g.try_into().expect("three parameters");
            let dx = conv2d_backward(&cache, v[1], &probe, Some((gw, gb)), true)?.expect("requested");
            add_into(gx, &dx);
            Ok(project(&out, &probe))
        },
        &mut ps,
        STEP,
    )
}

fn pool_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ph, pw) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let (h, w) = (ph * rng.random_range(1..=3), pw * rng.random_range(1..=3));
    // distinct values at least 0.05 apart so no perturbation flips an argmax
    let n = b * c * h * w;
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 + rng.random_range(0.0..0.05)).collect();
    values.shuffle(&mut rng);
    let mut ps = ParamSet::new(vec![param("x", Tensor::new(vec![b, c, h, w], values)?)])?;
    let probe = random(&[b, c, h / ph, w / pw], &mut rng);
    grad_check(
        |ps| {
            let (v, mut g) = ps.split_values_grads();
            let (out, cache) = maxpool2d_forward(v[0], ph, pw)?;
            add_into(g[0], &maxpool2d_backward(&cache, &probe)?);
            Ok(project(&out, &probe))
        },
        &mut ps,
        STEP,
    )
}

fn linear_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, din, dout) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5));
    let mut ps = ParamSet::new(vec![
        param("x", random(&[n, din], &mut rng)),
        param("w", random(&[dout, din], &mut rng)),
        param("b", random(&[dout], &mut rng)),
    ])?;
    let target = random(&[n, dout], &mut rng);
    // mean-square loss against a random target
    grad_check(
        |ps| {
            let (v, g) = ps.split_values_grads();
            let out = linear(v[0], v[1], v[2])?;
            let scale = 1.0 / out.len() as f64;
            let diff = Tensor::from_fn(out.shape(), |i| out.data()[i] - target.data()[i]);
            let grad_out = diff.map(|d| 2.0 * d * scale);
            let [gx, gw, gb]: [&mut Tensor<f64>; 3] = g.try_into().expect("three parameters");
            let dx = linear_backward(v[0], v[1], &grad_out, Some((gw, gb)), true)?.expect("requested");
            add_into(gx, &dx);
            Ok(diff.data().iter().map(|d| d * d).sum::<f64>() * scale)
        },
        &mut ps,
        STEP,
    )
}

fn gru_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (steps, batch, din, h) = (
        rng.random_range(1..=4),
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
    );
    let mut params = vec![param("x", random(&[steps, batch, din], &mut rng))];
    for dir in ["fwd", "bwd"] {
        params.push(param(&format!("{dir}.w_ih"), random(&[3 * h, din], &mut rng)));
        params.push(param(&format!("{dir}.w_hh"), random(&[3 * h, h], &mut rng)));
        params.push(param(&format!("{dir}.b_ih"), random(&[3 * h], &mut rng)));
        params.push(param(&format!("{dir}.b_hh"), random(&[3 * h], &mut rng)));
    }
    let mut ps = ParamSet::new(params)?;
    let probe = random(&[steps, batch, 2 * h], &mut rng);
    grad_check(
        |ps| {
            let (v, g) = ps.split_values_grads();
            let weights = |o: usize| GruWeights { w_ih: v[o], w_hh: v[o + 1], b_ih: v[o + 2], b_hh: v[o + 3] };
            let (out, cache) = bigru_forward(v[0], weights(1), weights(5))?;
            let [gx, a, b, c, d, e, f, gg, hh]: [&mut Tensor<f64>; 9] = g.try_into().expect("nine parameters");
            let grads = (
                GruGrads { w_ih: a, w_hh: b, b_ih: c, b_hh: d },
                GruGrads { w_ih: e, w_hh: f, b_ih: gg, b_hh: hh },
            );
            let dx = bigru_backward(&cache, weights(1), weights(5), &probe, Some(grads), true)?.expect("requested");
            add_into(gx, &dx);
            Ok(project(&out, &probe))
        },
        &mut ps,
        STEP,
    )
}

fn eca_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=6));
    let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let r = [1, 3, 5][rng.random_range(0..3)];
    let mut ps = ParamSet::new(vec![
        param("z", random(&[b, c, h, w], &mut rng)),
        param("kernel", random(&[r], &mut rng)),
    ])?;
    let probe = random(&[b, c, h, w], &mut rng);
    grad_check(
        |ps| {
            let (v, g) = ps.split_values_grads();
            let (out, cache) = eca_forward(v[0], v[1])?;
            let [gz, gk]: [&mut Tensor<f64>; 2] = g.try_into().expect("two parameters");
            let dz = eca_backward(&cache, v[0], v[1], &probe, Some(gk), true)?.expect("requested");
            add_into(gz, &dz);
            Ok(project(&out, &probe))
        },
        &mut ps,
        STEP,
    )
}

/// The recognizer with ECA on a 2-symbol alphabet, 32x16 input (4 frames).
fn pipeline_case(seed: u64) -> Result<GradReport> {
    pipeline_with_step(seed, STEP)
}

pub fn pipeline_with_step(seed: u64, step: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        conv_channels: vec![rng.random_range(1..=3), rng.random_range(2..=3), rng.random_range(2..=4)],
        recurrent_hidden: rng.random_range(2..=3),
        alphabet_size: 2,
        use_eca: true,
        ..ModelConfig::default()
    };
    let model = Crnn::new(cfg)?;
    let mut params: ParamSet<f64> = model.init(seed);
    // nudge the zero-initialized biases so ReLUs do not sit on their kink
    for p in params.iter_mut() {
        if p.name().ends_with("bias") || p.name().contains("b_") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let batch = rng.random_range(1..=2);
    let x = Tensor::from_fn(&[batch, 1, 32, 16], |_| rng.random_range(0.0..1.0));
    let targets: Vec<LabelSeq> = (0..batch)
        .map(|_| {
            let len = rng.random_range(1..=2);
            LabelSeq::new((0..len).map(|_| rng.random_range(1..=2)).collect()).expect("non-empty")
        })
        .collect();
    grad_check(|p| model.loss_and_grad(p, &x, &targets, 1.0, GroupSet::ALL), &mut params, step)
}

/// Runs `CONFIGS_PER_LAYER` seeded configurations of `layer`.
pub fn run_layer(layer: &'static str) -> Result<Vec<Outcome>> {
    let case: fn(u64) -> Result<GradReport> = match layer {
        "conv2d" => conv_case,
        "maxpool2d" => pool_case,
        "linear" => linear_case,
        "bigru" => gru_case,
        "eca" => eca_case,
        "crnn+ctc" => pipeline_case,
        other => panic!("no gradient case for {other}"),
    };
    (0..CONFIGS_PER_LAYER)
        .map(|seed| Ok(Outcome { layer, seed, report: case(1000 + seed)? }))
        .collect()
}

pub fn run_all() -> Result<Vec<Outcome>> {
    let mut all = Vec::new();
    for layer in LAYERS {
        all.extend(run_layer(layer)?);
    }
    Ok(all)
}
