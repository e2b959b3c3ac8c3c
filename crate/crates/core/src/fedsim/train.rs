//! Minibatch training passes and the per-stage operations built on them.

use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainConfig;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::Crnn;
use crate::optim::{adadelta_step, AdadeltaConfig};
use crate::params::{Group, GroupSet, ParamSet};

/// One training phase: which groups move, how far, and an optional
/// proximal anchor `(reference, mu)`.
#[derive(Clone, Copy, Debug)]
pub struct StepConfig<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: &'a AdadeltaConfig,
    pub lr_scale: f64,
    pub trainable: GroupSet,
    pub prox: Option<(&'a ParamSet, f64)>,
}

/// Shuffled minibatch passes over `data`. Each minibatch accumulates the
/// per-sample CTC gradients (samples have different widths and are run one
/// at a time), averages them, adds the proximal pull when configured and
/// takes one Adadelta step on the trainable groups. Returns the mean loss
/// of the last epoch, or `None` when nothing was trained.
///
/// A zero `lr_scale` cannot move any value, so the pass is skipped outright
/// (the optimizer accumulators are not advanced either).
pub fn train_epochs(
    model: &Crnn,
    params: &mut ParamSet,
    data: &Dataset,
    step: &StepConfig<'_>,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    if step.epochs == 0 || step.lr_scale == 0.0 {
        return Ok(None);
    }
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let frozen = step.trainable.complement();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = 0.0;
    for _ in 0..step.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(step.batch_size) {
            params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &data.samples()[i];
                total += model.loss_and_grad(params, &s.batch(), std::slice::from_ref(&s.label), scale, step.trainable)?;
            }
            if let Some((anchor, mu)) = step.prox.filter(|&(_, mu)| mu != 0.0) {
                add_proximal(params, anchor, mu as f32, step.trainable)?;
            }
            adadelta_step(params, step.optimizer, step.lr_scale, frozen);
        }
        last = total / data.len() as f64;
        if !last.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged to {last}")));
        }
    }
    Ok(Some(last))
}

/// `grad += mu * (w - anchor)` on the trainable groups.
fn add_proximal(params: &mut ParamSet, anchor: &ParamSet, mu: f32, trainable: GroupSet) -> Result<()> {
    params.check_compatible(anchor)?;
    for (p, a) in params.iter_mut().zip(anchor.iter()) {
        if !trainable.contains(p.group()) {
            continue;
        }
        let (value, grad) = (p.value.data().to_vec(), p.grad.data_mut());
        for ((g, w), r) in grad.iter_mut().zip(value).zip(a.value.data()) {
            *g += mu * (w - r);
        }
    }
    Ok(())
}

/// Trains every group of the server model on the virtual corpus.
pub fn server_finetune(
    model: &Crnn,
    global: &mut ParamSet,
    virtual_data: &Dataset,
    cfg: &TrainConfig,
    lr_scale: f64,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    if virtual_data.is_empty() {
        return Err(Error::Config("server fine-tuning needs a non-empty virtual corpus".into()));
    }
    let step = StepConfig {
        epochs: cfg.server_epochs,
        batch_size: cfg.batch_size,
        optimizer: &cfg.optimizer,
        lr_scale,
        trainable: GroupSet::ALL,
        prox: None,
    };
    train_epochs(model, global, virtual_data, &step, rng)
}

/// Stage 1: local training with the head frozen when `freeze_head` is set.
/// `local` must already hold the broadcast values; `prox_anchor` enables
/// the FedProx pull towards it.
pub fn local_train_stage1(
    model: &Crnn,
    local: &mut ParamSet,
    data: &Dataset,
    cfg: &TrainConfig,
    freeze_head: bool,
    lr_scale: f64,
    prox_anchor: Option<&ParamSet>,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    let trainable = if freeze_head {
        GroupSet::of(&[Group::Body, Group::Eca])
    } else {
        GroupSet::ALL
    };
    let step = StepConfig {
        epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        optimizer: &cfg.optimizer,
        lr_scale,
        trainable,
        prox: prox_anchor.map(|a| (a, cfg.fedprox_mu)),
    };
    train_epochs(model, local, data, &step, rng)
}

/// Stage 2: sets `personal` to `(local + global) / 2`, then (when `train`
/// is set) fine-tunes only its ECA kernels on `data`. `personal` keeps its
/// own optimizer state across calls.
pub fn personalize_stage2(
    model: &Crnn,
    personal: &mut ParamSet,
    local: &ParamSet,
    global: &ParamSet,
    data: &Dataset,
    cfg: &TrainConfig,
    train: bool,
    lr_scale: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    local.check_compatible(global)?;
    personal.check_compatible(local)?;
    for ((p, l), g) in personal.iter_mut().zip(local.iter()).zip(global.iter()) {
        for ((v, &a), &b) in p.value.data_mut().iter_mut().zip(l.value.data()).zip(g.value.data()) {
            *v = 0.5 * (a + b);
        }
    }
    if train {
        let step = StepConfig {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            optimizer: &cfg.optimizer,
            lr_scale,
            trainable: GroupSet::of(&[Group::Eca]),
            prox: None,
        };
        train_epochs(model, personal, data, &step, rng)?;
    }
    Ok(())
}
