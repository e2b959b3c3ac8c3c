//! The shared round loop behind every algorithm.

use super::channel::Channel;
use super::train::{local_train_stage1, personalize_stage2, server_finetune, train_epochs, StepConfig};
use super::{aggregate, AggregateSource, Algorithm, TrainConfig};
use crate::datagen::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_round, EvalRequest, RoundReport};
use crate::model::{Crnn, ModelConfig};
use crate::optim::cosine_round_scale;
use crate::params::{GroupSet, ParamSet};
use crate::rng::{derive_seed, stream, Tag};

/// Models at the end of a run.
#[derive(Clone, Debug)]
pub struct RoundState {
    /// Number of completed rounds.
    pub round: usize,
    /// Server model after the last aggregation (federated algorithms).
    pub global: Option<ParamSet>,
    /// Each client's own trained model (stage-1 output when federated).
    pub locals: Vec<ParamSet>,
    /// Personalized models of the last round (personalized algorithm).
    pub personalized: Vec<ParamSet>,
    /// The per-client models the final report describes.
    pub evaluated: Vec<ParamSet>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub model_config: ModelConfig,
    pub state: RoundState,
    pub reports: Vec<RoundReport>,
    pub channel: Channel,
}

impl RunOutput {
    pub fn final_report(&self) -> &RoundReport {
        self.reports.last().expect("the final round is always evaluated")
    }
}

/// Which optional steps an algorithm takes.
#[derive(Clone, Copy, Debug)]
struct Plan {
    federated: bool,
    server_finetune: bool,
    freeze_head: bool,
    stage2: bool,
    prox: bool,
    pretrain: bool,
    final_finetune: bool,
}

impl Plan {
    fn of(cfg: &TrainConfig) -> Self {
        let flags = cfg.effective_flags();
        Plan {
            federated: cfg.algorithm.is_federated(),
            server_finetune: flags.use_virtual_data,
            freeze_head: flags.freeze_head,
            stage2: flags.stage2,
            prox: cfg.algorithm == Algorithm::FedProx,
            pretrain: cfg.algorithm == Algorithm::LocalPretrain,
            final_finetune: cfg.algorithm == Algorithm::FedAvgFt,
        }
    }
}

/// Runs the personalized algorithm (`cfg.algorithm` must be `pfedcr`).
pub fn run_pfedcr(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    clients: &[ClientData],
    virtual_data: Option<&Dataset>,
) -> Result<RunOutput> {
    if cfg.algorithm != Algorithm::PFedCr {
        return Err(Error::Config(format!("run_pfedcr called with algorithm {}", cfg.algorithm)));
    }
    run_rounds(cfg, model_cfg, clients, virtual_data)
}

/// Runs one of the baselines.
pub fn run_baseline(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    clients: &[ClientData],
    virtual_data: Option<&Dataset>,
) -> Result<RunOutput> {
    if cfg.algorithm == Algorithm::PFedCr {
        return Err(Error::Config("run_baseline called with the personalized algorithm".into()));
    }
    run_rounds(cfg, model_cfg, clients, virtual_data)
}

/// Runs whichever algorithm `cfg` names.
pub fn run(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    clients: &[ClientData],
    virtual_data: Option<&Dataset>,
) -> Result<RunOutput> {
    run_rounds(cfg, model_cfg, clients, virtual_data)
}

fn run_rounds(
    cfg: &TrainConfig,
    base_model: &ModelConfig,
    clients: &[ClientData],
    virtual_data: Option<&Dataset>,
) -> Result<RunOutput> {
    cfg.validate()?;
    if clients.len() != cfg.clients {
        return Err(Error::Config(format!(
            "configured for {} clients, got {} datasets",
            cfg.clients,
            clients.len()
        )));
    }
    let plan = Plan::of(cfg);
    let needs_virtual = (plan.federated && plan.server_finetune) || plan.pretrain;
    let virtual_data = match virtual_data {
        Some(d) if !d.is_empty() => Some(d),
        _ if needs_virtual => {
            return Err(Error::Config(format!("{} needs a non-empty virtual corpus", cfg.algorithm)))
        }
        _ => None,
    };
    let model_cfg = cfg.effective_model(base_model);
    let model = Crnn::new(model_cfg.clone())?;
    for (k, c) in clients.iter().enumerate() {
        for d in [&c.train, &c.test] {
            if d.alphabet_size() != model_cfg.alphabet_size {
                return Err(Error::Config(format!(
                    "client {k}: data alphabet {} differs from model alphabet {}",
                    d.alphabet_size(),
                    model_cfg.alphabet_size
                )));
            }
        }
    }
    let init: ParamSet = model.init(derive_seed(cfg.seed, Tag::ModelInit, &[]));
    let k_clients = clients.len();
    let tests: Vec<&Dataset> = clients.iter().map(|c| &c.test).collect();
    let freqs: Vec<&[u64]> = clients.iter().map(|c| c.train.freq()).collect();
    let mut channel = Channel::new();
    let mut reports = Vec::new();

    let start = if plan.pretrain {
        let mut pre = init.clone();
        let step = StepConfig {
            epochs: cfg.pretrain_epochs,
            batch_size: cfg.batch_size,
            optimizer: &cfg.optimizer,
            lr_scale: 1.0,
            trainable: GroupSet::ALL,
            prox: None,
        };
        let data = virtual_data.expect("checked above");
        train_epochs(&model, &mut pre, data, &step, &mut stream(cfg.seed, Tag::Pretrain, &[]))
            .map_err(|e| e.in_round(0, "pretraining"))?;
        pre.values_only()
    } else {
        init.clone()
    };

    let mut server = start.clone();
    let mut locals = vec![start.clone(); k_clients];
    let mut personal = vec![start.clone(); k_clients];
    let mut evaluated: Vec<ParamSet> = Vec::new();

    for t in 0..cfg.rounds {
        let scale = cosine_round_scale(t, cfg.rounds)?;
        let order = |k: usize, phase: u64| stream(cfg.seed, Tag::ClientOrder, &[k as u64, t as u64, phase]);
        if !plan.federated {
            for (k, c) in clients.iter().enumerate() {
                local_train_stage1(&model, &mut locals[k], &c.train, cfg, false, scale, None, &mut order(k, 0))
                    .map_err(|e| e.in_round(t, format!("client {k}")))?;
            }
            if cfg.eval.evaluates(t, cfg.rounds) {
                evaluated = locals.iter().map(ParamSet::values_only).collect();
            }
        } else {
            if plan.server_finetune {
                let data = virtual_data.expect("checked above");
                server_finetune(&model, &mut server, data, cfg, scale, &mut stream(cfg.seed, Tag::ServerOrder, &[t as u64]))
                    .map_err(|e| e.in_round(t, "server fine-tuning"))?;
            }
            let global = server.values_only();
            let mut uploads = Vec::with_capacity(k_clients);
            for (k, c) in clients.iter().enumerate() {
                let received = channel.broadcast(t, k, &global);
                locals[k].load_values(&received)?;
                let anchor = plan.prox.then_some(&received);
                local_train_stage1(&model, &mut locals[k], &c.train, cfg, plan.freeze_head, scale, anchor, &mut order(k, 0))
                    .map_err(|e| e.in_round(t, format!("client {k} stage 1")))?;
                let needs_average = plan.stage2 || cfg.aggregate_source == AggregateSource::Averaged;
                if needs_average {
                    personalize_stage2(
                        &model,
                        &mut personal[k],
                        &locals[k],
                        &received,
                        &c.train,
                        cfg,
                        false,
                        scale,
                        &mut order(k, 1),
                    )?;
                }
                let upload = match cfg.aggregate_source {
                    AggregateSource::Stage1 => locals[k].values_only(),
                    AggregateSource::Averaged => personal[k].values_only(),
                };
                uploads.push(channel.upload(t, k, &upload));
                if plan.stage2 {
                    personalize_stage2(
                        &model,
                        &mut personal[k],
                        &locals[k],
                        &received,
                        &c.train,
                        cfg,
                        true,
                        scale,
                        &mut order(k, 1),
                    )
                    .map_err(|e| e.in_round(t, format!("client {k} stage 2")))?;
                }
            }
            let refs: Vec<&ParamSet> = uploads.iter().collect();
            let aggregated = aggregate(&refs).map_err(|e| e.in_round(t, "aggregation"))?;
            channel.note_aggregate(t, uploads.len());
            server.load_values(&aggregated)?;
            if cfg.eval.evaluates(t, cfg.rounds) {
                evaluated = if plan.stage2 {
                    personal.iter().map(ParamSet::values_only).collect()
                } else {
                    vec![aggregated; k_clients]
                };
            }
        }

        if cfg.eval.evaluates(t, cfg.rounds) {
            let last = t + 1 == cfg.rounds;
            if last && plan.final_finetune {
                // reported after the extra epochs below
                continue;
            }
            reports.push(report(&model, cfg, t, last, &evaluated, &tests, &freqs)?);
        }
    }

    if plan.final_finetune {
        let t = cfg.rounds;
        let global = server.values_only();
        for (k, c) in clients.iter().enumerate() {
            let received = channel.broadcast(t, k, &global);
            locals[k].load_values(&received)?;
            let step = StepConfig {
                epochs: cfg.finetune_epochs,
                batch_size: cfg.batch_size,
                optimizer: &cfg.optimizer,
                lr_scale: cfg.finetune_lr_scale,
                trainable: GroupSet::ALL,
                prox: None,
            };
            train_epochs(&model, &mut locals[k], &c.train, &step, &mut stream(cfg.seed, Tag::Finetune, &[k as u64]))
                .map_err(|e| e.in_round(t, format!("client {k} fine-tuning")))?;
        }
        evaluated = locals.iter().map(ParamSet::values_only).collect();
        reports.push(report(&model, cfg, cfg.rounds - 1, true, &evaluated, &tests, &freqs)?);
    }

    Ok(RunOutput {
        model_config: model_cfg,
        state: RoundState {
            round: cfg.rounds,
            global: plan.federated.then(|| server.values_only()),
            locals,
            personalized: if plan.stage2 && plan.federated { personal } else { Vec::new() },
            evaluated,
        },
        reports,
        channel,
    })
}

fn report(
    model: &Crnn,
    cfg: &TrainConfig,
    round: usize,
    last: bool,
    evaluated: &[ParamSet],
    tests: &[&Dataset],
    freqs: &[&[u64]],
) -> Result<RoundReport> {
    let request = EvalRequest {
        cross: last && cfg.eval.cross,
        buckets: if last { cfg.eval.buckets.as_ref() } else { None },
    };
    let refs: Vec<&ParamSet> = evaluated.iter().collect();
    evaluate_round(model, round, cfg.algorithm, &refs, tests, freqs, &request).map_err(|e| e.in_round(round, "evaluation"))
}
