use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eca::{eca_backward, eca_forward, EcaCache};
use super::ModelConfig;
use crate::ctc::{ctc_loss, LabelSeq};
use crate::error::{Error, Result};
use crate::nn::{
    bigru_backward, bigru_forward, conv2d_backward, conv2d_forward, linear, linear_backward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, BiGruCache, Conv2dCache,
    Conv2dSpec, GruGrads, GruWeights, PoolCache,
};
use crate::params::{Group, GroupSet, Param, ParamSet};
use crate::tensor::{Scalar, Tensor};

const CONV_SPEC: Conv2dSpec = Conv2dSpec { stride: 1, padding: 1 };
const KERNEL: usize = 3;

#[derive(Clone, Debug)]
struct BlockSlots {
    conv_w: usize,
    conv_b: usize,
    eca: Option<usize>,
}

/// Positions of every layer's parameters inside the [`ParamSet`].
#[derive(Clone, Debug)]
struct Layout {
    blocks: Vec<BlockSlots>,
    /// `[w_ih, w_hh, b_ih, b_hh]` for the forward then backward direction.
    gru: [[usize; 4]; 2],
    head_w: usize,
    head_b: usize,
}

/// Parameter indices per group; built once per model and checked to be a
/// partition of the whole set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    pub body: Vec<usize>,
    pub head: Vec<usize>,
    pub eca: Vec<usize>,
}

pub fn group_partition<T: Scalar>(params: &ParamSet<T>) -> GroupPartition {
    let mut part = GroupPartition {
        body: Vec::new(),
        head: Vec::new(),
        eca: Vec::new(),
    };
    for (i, p) in params.iter().enumerate() {
        match p.group() {
            Group::Body => part.body.push(i),
            Group::Head => part.head.push(i),
            Group::Eca => part.eca.push(i),
        }
    }
    part
}

/// Stateless CRNN-ECA network; parameters live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Crnn {
    cfg: ModelConfig,
    layout: Layout,
    shapes: Vec<(String, Group, Vec<usize>)>,
}

/// Activations retained by [`Crnn::forward_train`] for the backward pass.
pub struct Trace<T: Scalar> {
    blocks: Vec<BlockTrace<T>>,
    /// `[B, C, H', T']` feature map before height averaging.
    feature_dims: [usize; 4],
    gru: BiGruCache<T>,
    gru_out: Tensor<T>,
    frames: usize,
    batch: usize,
}

struct BlockTrace<T: Scalar> {
    conv: Conv2dCache<T>,
    /// Post-ReLU activation (the ECA input).
    relu_out: Tensor<T>,
    eca: Option<EcaCache<T>>,
    pool: PoolCache,
}

impl Crnn {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut shapes = Vec::new();
        let mut blocks = Vec::new();
        let push = |shapes: &mut Vec<(String, Group, Vec<usize>)>, name: String, group, shape: Vec<usize>| {
            shapes.push((name, group, shape));
            shapes.len() - 1
        };
        let mut cin = 1;
        let kernels = cfg.eca_kernel_sizes();
        for (i, &cout) in cfg.conv_channels.iter().enumerate() {
            let conv_w = push(&mut shapes, format!("conv{i}.weight"), Group::Body, vec![cout, cin, KERNEL, KERNEL]);
            let conv_b = push(&mut shapes, format!("conv{i}.bias"), Group::Body, vec![cout]);
            let eca = cfg
                .use_eca
                .then(|| push(&mut shapes, format!("eca{i}.kernel"), Group::Eca, vec![kernels[i]]));
            blocks.push(BlockSlots { conv_w, conv_b, eca });
            cin = cout;
        }
        let h = cfg.recurrent_hidden;
        let mut gru = [[0; 4]; 2];
        for (d, dir) in ["fwd", "bwd"].iter().enumerate() {
            gru[d] = [
                push(&mut shapes, format!("gru.{dir}.w_ih"), Group::Body, vec![3 * h, cin]),
                push(&mut shapes, format!("gru.{dir}.w_hh"), Group::Body, vec![3 * h, h]),
                push(&mut shapes, format!("gru.{dir}.b_ih"), Group::Body, vec![3 * h]),
                push(&mut shapes, format!("gru.{dir}.b_hh"), Group::Body, vec![3 * h]),
            ];
        }
        let head_w = push(&mut shapes, "head.weight".into(), Group::Head, vec![cfg.num_classes(), 2 * h]);
        let head_b = push(&mut shapes, "head.bias".into(), Group::Head, vec![cfg.num_classes()]);
        Ok(Self {
            cfg,
            layout: Layout {
                blocks,
                gru,
                head_w,
                head_b,
            },
            shapes,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases 0.
    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = self
            .shapes
            .iter()
            .map(|(name, group, shape)| {
                let value = if name.ends_with("bias") || name.contains(".b_") {
                    Tensor::zeros(shape)
                } else {
                    // 1-d ECA kernels count their own taps as fan-in
                    let fan_in = match shape.len() {
                        1 => shape[0],
                        _ => shape[1..].iter().product(),
                    };
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
                };
                Param::new(name.clone(), *group, value)
            })
            .collect();
        let set = ParamSet::new(params).expect("generated names are unique");
        debug_assert!(self.check_params(&set).is_ok());
        set
    }

    /// Verifies `params` matches this architecture's (name, group, shape)
    /// sequence.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let sig = params.signature();
        if sig.len() != self.shapes.len() {
            return Err(Error::Config(format!(
                "model expects {} parameters, got {}",
                self.shapes.len(),
                sig.len()
            )));
        }
        for (want, got) in self.shapes.iter().zip(&sig) {
            if want != got {
                return Err(Error::Config(format!("parameter mismatch: expected {want:?}, got {got:?}")));
            }
        }
        Ok(())
    }

    fn input_dims<T: Scalar>(&self, images: &Tensor<T>) -> Result<(usize, usize, usize)> {
        images.expect_rank("crnn forward", 4)?;
        let s = images.shape();
        if s[1] != 1 || s[2] != self.cfg.input_height {
            return Err(Error::shape(
                "crnn forward",
                format!("expected [B, 1, {}, W], got {s:?}", self.cfg.input_height),
            ));
        }
        let frames = self.cfg.frames_for_width(s[3])?;
        Ok((s[0], s[3], frames))
    }

    /// Logits `[T', B, A+1]` for `[B, 1, H, W]` images.
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_train(params, images).map(|(logits, _)| logits)
    }

    /// Forward pass keeping the activations needed by [`Crnn::backward`].
    pub fn forward_train<T: Scalar>(&self, params: &ParamSet<T>, images: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let (batch, _, frames) = self.input_dims(images)?;
        let value = |i: usize| &params.get(i).value;
        let mut x = images.clone();
        let mut blocks = Vec::with_capacity(self.layout.blocks.len());
        for (slots, &(ph, pw)) in self.layout.blocks.iter().zip(&self.cfg.pools) {
            let (mut y, conv) = conv2d_forward(&x, value(slots.conv_w), value(slots.conv_b), CONV_SPEC)?;
            relu_forward(&mut y);
            let (attended, eca) = match slots.eca {
                Some(k) => {
                    let (out, cache) = eca_forward(&y, value(k))?;
                    (Some(out), Some(cache))
                }
                None => (None, None),
            };
            let (pooled, pool) = maxpool2d_forward(attended.as_ref().unwrap_or(&y), ph, pw)?;
            blocks.push(BlockTrace {
                conv,
                relu_out: y,
                eca,
                pool,
            });
            x = pooled;
        }
        let s = x.shape();
        let feature_dims = [s[0], s[1], s[2], s[3]];
        let [_, c, hh, tw] = feature_dims;
        debug_assert_eq!(tw, frames);
        // mean over the residual height, laid out as [T', B, C]
        let inv = T::of(1.0 / hh as f64);
        let mut seq = Tensor::zeros(&[frames, batch, c]);
        for b in 0..batch {
            for ci in 0..c {
                let plane = &x.data()[(b * c + ci) * hh * tw..][..hh * tw];
                for t in 0..tw {
                    let mut acc = T::zero();
                    for row in 0..hh {
                        acc += plane[row * tw + t];
                    }
                    seq.data_mut()[(t * batch + b) * c + ci] = acc * inv;
                }
            }
        }
        let (gru_out, gru) = bigru_forward(&seq, self.gru_weights(params, 0), self.gru_weights(params, 1))?;
        let flat = gru_out.clone().reshape(&[frames * batch, 2 * self.cfg.recurrent_hidden])?;
        let logits = linear(&flat, value(self.layout.head_w), value(self.layout.head_b))?
            .reshape(&[frames, batch, self.cfg.num_classes()])?;
        Ok((
            logits,
            Trace {
                blocks,
                feature_dims,
                gru,
                gru_out: flat,
                frames,
                batch,
            },
        ))
    }

    fn gru_weights<'a, T: Scalar>(&self, params: &'a ParamSet<T>, dir: usize) -> GruWeights<'a, T> {
        let [w_ih, w_hh, b_ih, b_hh] = self.layout.gru[dir];
        GruWeights {
            w_ih: &params.get(w_ih).value,
            w_hh: &params.get(w_hh).value,
            b_ih: &params.get(b_ih).value,
            b_hh: &params.get(b_hh).value,
        }
    }

    /// Backpropagates `grad_logits` and accumulates into the `grad` of every
    /// parameter whose group is in `trainable`. Work below the lowest
    /// trainable layer is skipped.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        trace: &Trace<T>,
        grad_logits: &Tensor<T>,
        trainable: GroupSet,
    ) -> Result<()> {
        let (frames, batch) = (trace.frames, trace.batch);
        let classes = self.cfg.num_classes();
        if grad_logits.shape() != [frames, batch, classes] {
            return Err(Error::shape(
                "crnn backward",
                format!("grad {:?} vs logits [{frames}, {batch}, {classes}]", grad_logits.shape()),
            ));
        }
        let body = trainable.contains(Group::Body);
        let eca = trainable.contains(Group::Eca) && self.cfg.use_eca;
        let (values, grads) = params.split_values_grads();
        let mut grads: Vec<Option<&mut Tensor<T>>> = grads.into_iter().map(Some).collect();
        let mut take = |i: usize| grads[i].take().expect("each parameter slot is used once");
        let l = &self.layout;

        let dflat = grad_logits.clone().reshape(&[frames * batch, classes])?;
        let head_grads = trainable
            .contains(Group::Head)
            .then(|| (take(l.head_w), take(l.head_b)));
        let Some(d_gru_out) = linear_backward(&trace.gru_out, values[l.head_w], &dflat, head_grads, body || eca)? else {
            return Ok(());
        };
        let d_gru_out = d_gru_out.reshape(&[frames, batch, 2 * self.cfg.recurrent_hidden])?;

        let weights = |d: usize| {
            let [w_ih, w_hh, b_ih, b_hh] = l.gru[d].map(|i| values[i]);
            GruWeights { w_ih, w_hh, b_ih, b_hh }
        };
        let gru_grads = body.then(|| {
            let mut dir = |d: usize| {
                let [a, b, c, e] = l.gru[d];
                GruGrads { w_ih: take(a), w_hh: take(b), b_ih: take(c), b_hh: take(e) }
            };
            (dir(0), dir(1))
        });
        let d_seq = bigru_backward(&trace.gru, weights(0), weights(1), &d_gru_out, gru_grads, true)?
            .expect("input gradient requested");

        // undo the height mean: spread each frame gradient over the rows
        let [_, c, hh, tw] = trace.feature_dims;
        let inv = T::of(1.0 / hh as f64);
        let mut dx = Tensor::zeros(&trace.feature_dims);
        for b in 0..batch {
            for ci in 0..c {
                let plane = &mut dx.data_mut()[(b * c + ci) * hh * tw..][..hh * tw];
                for t in 0..tw {
                    let g = d_seq.data()[(t * batch + b) * c + ci] * inv;
                    for row in 0..hh {
                        plane[row * tw + t] = g;
                    }
                }
            }
        }

        for i in (0..l.blocks.len()).rev() {
            let slots = &l.blocks[i];
            let bt = &trace.blocks[i];
            let below = body || (eca && l.blocks[..i].iter().any(|s| s.eca.is_some()));
            let need_conv_out = body || below;
            let mut d = maxpool2d_backward(&bt.pool, &dx)?;
            if let (Some(k), Some(cache)) = (slots.eca, bt.eca.as_ref()) {
                let kg = eca.then(|| take(k));
                match eca_backward(cache, &bt.relu_out, values[k], &d, kg, need_conv_out)? {
                    Some(dz) => d = dz,
                    None => return Ok(()),
                }
            }
            if !need_conv_out {
                return Ok(());
            }
            relu_backward(&bt.relu_out, &mut d);
            let conv_grads = body.then(|| (take(slots.conv_w), take(slots.conv_b)));
            match conv2d_backward(&bt.conv, values[slots.conv_w], &d, conv_grads, below)? {
                Some(prev) => dx = prev,
                None => return Ok(()),
            }
        }
        Ok(())
    }

    /// Mean CTC loss of a batch; when `trainable` is non-empty the gradient
    /// (scaled by `grad_scale`) is accumulated into `params`.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        images: &Tensor<T>,
        targets: &[LabelSeq],
        grad_scale: f64,
        trainable: GroupSet,
    ) -> Result<f64> {
        let (logits, trace) = self.forward_train(params, images)?;
        let (loss, mut grad) = ctc_loss(&logits, targets)?;
        if trainable.is_empty() {
            return Ok(loss);
        }
        if grad_scale != 1.0 {
            let s = T::of(grad_scale);
            grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
        self.backward(params, &trace, &grad, trainable)?;
        Ok(loss)
    }
}

/// Builds the architecture for `cfg` and returns freshly initialized
/// parameters.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    let model = Crnn::new(cfg.clone())?;
    Ok(model.init(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn tiny(use_eca: bool) -> ModelConfig {
        ModelConfig {
            input_height: 8,
            conv_channels: vec![3, 4],
            pools: vec![(2, 2), (2, 1)],
            recurrent_hidden: 3,
            alphabet_size: 3,
            use_eca,
            ..ModelConfig::default()
        }
    }

    fn image(b: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[b, 1, h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn layout_and_shapes() {
        let model = Crnn::new(ModelConfig::default()).unwrap();
        let params: ParamSet<f32> = model.init(1);
        let names: Vec<_> = params.iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names[0], "conv0.weight");
        assert_eq!(names[2], "eca0.kernel");
        assert_eq!(names.last().unwrap(), "head.bias");
        let part = group_partition(&params);
        assert_eq!(part.head.len(), 2);
        assert_eq!(part.eca.len(), 3);
        assert_eq!(part.body.len() + part.head.len() + part.eca.len(), params.len());
        let x = Tensor::<f32>::full(&[2, 1, 32, 48], 0.5);
        let logits = model.forward(&params, &x).unwrap();
        assert_eq!(logits.shape(), &[12, 2, 41]);

        let plain = Crnn::new(ModelConfig { use_eca: false, ..ModelConfig::default() }).unwrap();
        let p2: ParamSet<f32> = plain.init(1);
        assert_eq!(p2.numel_in(Group::Eca), 0);
        assert!(plain.check_params(&params).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let model = Crnn::new(tiny(true)).unwrap();
        let a: ParamSet<f32> = model.init(7);
        let b: ParamSet<f32> = model.init(7);
        let c: ParamSet<f32> = model.init(8);
        assert!(a.values_bits_eq(&b, GroupSet::ALL));
        assert!(!a.values_bits_eq(&c, GroupSet::ALL));
    }

    #[test]
    fn bad_input_is_rejected() {
        let model = Crnn::new(tiny(true)).unwrap();
        let params: ParamSet<f64> = model.init(0);
        assert!(model.forward(&params, &image(1, 6, 8, 0)).is_err());
        assert!(model.forward(&params, &image(1, 8, 7, 0)).is_err());
    }

    #[test]
    fn full_pipeline_gradient() {
        for use_eca in [true, false] {
            let model = Crnn::new(tiny(use_eca)).unwrap();
            let mut params: ParamSet<f64> = model.init(3);
            let x = image(2, 8, 16, 4);
            let targets = [LabelSeq::new(vec![1, 2]).unwrap(), LabelSeq::new(vec![3, 3]).unwrap()];
            let err = grad_check(
                |p| model.loss_and_grad(p, &x, &targets, 1.0, GroupSet::ALL),
                &mut params,
                1e-5,
            )
            .unwrap();
            assert!(err.max_error < 1e-4, "use_eca={use_eca}: {err:?}");
        }
    }

    #[test]
    fn masked_backward_matches_full_backward() {
        let model = Crnn::new(tiny(true)).unwrap();
        let params: ParamSet<f64> = model.init(5);
        let x = image(1, 8, 16, 6);
        let targets = [LabelSeq::new(vec![2, 1, 3]).unwrap()];
        let mut full = params.clone();
        model.loss_and_grad(&mut full, &x, &targets, 0.5, GroupSet::ALL).unwrap();
        for group in Group::ALL {
            let mut masked = params.clone();
            model
                .loss_and_grad(&mut masked, &x, &targets, 0.5, GroupSet::of(&[group]))
                .unwrap();
            for (m, f) in masked.iter().zip(full.iter()) {
                if m.group() == group {
                    assert!(m.grad.bits_eq(&f.grad), "{}", m.name());
                } else {
                    assert!(m.grad.data().iter().all(|&g| g == 0.0), "{}", m.name());
                }
            }
        }
    }
}
