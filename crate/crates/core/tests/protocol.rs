mod support;

use pfedcr_core::datagen::Dataset;
use pfedcr_core::fedsim::{
    aggregate, local_train_stage1, personalize_stage2, run, server_finetune, AblationFlags, AggregateSource,
    Algorithm, Direction, Event,
};
use pfedcr_core::rng::{derive_seed, stream, Tag};
use pfedcr_core::{Crnn, Group, GroupSet, Param, ParamSet, Tensor};
use proptest::prelude::*;
use support::fixtures::{config, corpus, tiny_model};

fn vector(values: &[f32]) -> ParamSet {
    ParamSet::new(vec![Param::new("w", Group::Body, Tensor::new(vec![values.len()], values.to_vec()).unwrap())]).unwrap()
}

fn midpoint_oracle(a: &ParamSet, b: &ParamSet, p: usize) -> Vec<f32> {
    a.get(p)
        .value
        .data()
        .iter()
        .zip(b.get(p).value.data())
        .map(|(&x, &y)| ((x as f64 + y as f64) / 2.0) as f32)
        .collect()
}

#[test]
fn aggregate_hand_vectors() {
    let m = aggregate(&[&vector(&[1.0, 3.0]), &vector(&[3.0, 5.0])]).unwrap();
    assert_eq!(m.get(0).value.data(), &[2.0, 4.0]);
    let one = vector(&[0.1, -7.25]);
    assert!(aggregate(&[&one]).unwrap().values_bits_eq(&one, GroupSet::ALL));
    let thirds = aggregate(&[&vector(&[1.0]), &vector(&[1.0]), &vector(&[2.0])]).unwrap();
    assert_eq!(thirds.get(0).value.data()[0], (4.0f64 / 3.0) as f32);
}

#[test]
fn aggregate_rejects_mismatch() {
    assert!(aggregate(&[&vector(&[1.0]), &vector(&[1.0, 2.0])]).is_err());
    assert!(aggregate(&[]).is_err());
}

proptest! {
    #[test]
    fn aggregate_of_duplicates_is_exact(values in prop::collection::vec(-1e6f32..1e6, 1..20), k in 1usize..6) {
        let p = vector(&values);
        let copies: Vec<&ParamSet> = (0..k).map(|_| &p).collect();
        prop_assert!(aggregate(&copies).unwrap().values_bits_eq(&p, GroupSet::ALL));
    }

    #[test]
    fn aggregate_matches_wide_mean(rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 4), 1..6)) {
        let sets: Vec<ParamSet> = rows.iter().map(|r| vector(r)).collect();
        let refs: Vec<&ParamSet> = sets.iter().collect();
        let m = aggregate(&refs).unwrap();
        for i in 0..4 {
            let mean = rows.iter().map(|r| r[i] as f64).sum::<f64>() / rows.len() as f64;
            let got = m.get(0).value.data()[i] as f64;
            prop_assert!((got - mean).abs() <= 1e-6 * mean.abs().max(1.0));
        }
    }
}

#[test]
fn stage1_freeze_keeps_head_bytes() {
    let c = corpus(1, 8, 3);
    let model = Crnn::new(tiny_model()).unwrap();
    let cfg = config(Algorithm::PFedCr, 1, 1, 3);
    let start: ParamSet = model.init(11);
    let mut frozen = start.clone();
    local_train_stage1(&model, &mut frozen, &c.clients[0].train, &cfg, true, 1.0, None, &mut stream(0, Tag::ClientOrder, &[0])).unwrap();
    assert!(frozen.values_bits_eq(&start, GroupSet::of(&[Group::Head])));
    assert!(!frozen.values_bits_eq(&start, GroupSet::of(&[Group::Body])));
    for (a, b) in frozen.iter().zip(start.iter()).filter(|(a, _)| a.group() == Group::Head) {
        assert!(a.square_avg.bits_eq(&b.square_avg) && a.acc_delta.bits_eq(&b.acc_delta));
    }
    let mut free = start.clone();
    local_train_stage1(&model, &mut free, &c.clients[0].train, &cfg, false, 1.0, None, &mut stream(0, Tag::ClientOrder, &[0])).unwrap();
    assert!(!free.values_bits_eq(&start, GroupSet::of(&[Group::Head])));
}

#[test]
fn stage2_changes_only_eca_after_averaging() {
    let c = corpus(1, 8, 4);
    let model = Crnn::new(tiny_model()).unwrap();
    let cfg = config(Algorithm::PFedCr, 1, 1, 4);
    let global: ParamSet = model.init(1);
    let mut local = global.clone();
    local_train_stage1(&model, &mut local, &c.clients[0].train, &cfg, true, 1.0, None, &mut stream(0, Tag::ClientOrder, &[1])).unwrap();
    let mut personal = global.clone();
    personalize_stage2(&model, &mut personal, &local, &global, &c.clients[0].train, &cfg, true, 1.0, &mut stream(0, Tag::ClientOrder, &[2])).unwrap();
    let mut eca_moved = false;
    for (i, p) in personal.iter().enumerate() {
        let mid = midpoint_oracle(&local, &global, i);
        let same = p.value.data().iter().zip(&mid).all(|(a, b)| a.to_bits() == b.to_bits());
        match p.group() {
            Group::Eca => eca_moved |= !same,
            _ => assert!(same, "{} differs from the midpoint", p.name()),
        }
    }
    assert!(eca_moved);

    // without the fine-tune the midpoint is returned as is
    let mut init_only = global.clone();
    personalize_stage2(&model, &mut init_only, &local, &global, &c.clients[0].train, &cfg, false, 1.0, &mut stream(0, Tag::ClientOrder, &[2])).unwrap();
    for (i, p) in init_only.iter().enumerate() {
        assert_eq!(p.value.data(), midpoint_oracle(&local, &global, i).as_slice());
    }
}

#[test]
fn stage2_average_of_constants() {
    let model = Crnn::new(tiny_model()).unwrap();
    let fill = |v: f32| {
        let mut p: ParamSet = model.init(0);
        p.iter_mut().for_each(|q| q.value.fill(v));
        p
    };
    let (local, global) = (fill(2.0), fill(4.0));
    let mut out = fill(0.0);
    let data = corpus(1, 2, 0).clients.remove(0).train;
    personalize_stage2(&model, &mut out, &local, &global, &data, &config(Algorithm::PFedCr, 1, 1, 0), false, 1.0, &mut stream(0, Tag::ClientOrder, &[])).unwrap();
    assert!(out.iter().all(|p| p.value.data().iter().all(|&v| v == 3.0)));
    let other = Crnn::new(pfedcr_core::ModelConfig { recurrent_hidden: 5, ..tiny_model() }).unwrap();
    let wrong: ParamSet = other.init(0);
    assert!(personalize_stage2(&model, &mut out, &local, &wrong, &data, &config(Algorithm::PFedCr, 1, 1, 0), false, 1.0, &mut stream(0, Tag::ClientOrder, &[])).is_err());
}

#[test]
fn server_finetune_without_epochs_is_identity() {
    let c = corpus(1, 4, 5);
    let model = Crnn::new(tiny_model()).unwrap();
    let cfg = pfedcr_core::fedsim::TrainConfig { server_epochs: 0, ..config(Algorithm::PFedCr, 1, 1, 5) };
    let start: ParamSet = model.init(2);
    let mut global = start.clone();
    server_finetune(&model, &mut global, &c.virtual_data, &cfg, 1.0, &mut stream(0, Tag::ServerOrder, &[0])).unwrap();
    assert_eq!(global, start);
    let empty = Dataset::new(Vec::new(), c.virtual_data.alphabet_size()).unwrap();
    assert!(server_finetune(&model, &mut global, &empty, &cfg, 1.0, &mut stream(0, Tag::ServerOrder, &[0])).is_err());
}

#[test]
fn all_flags_off_is_fedavg() {
    let c = corpus(2, 8, 6);
    let fedavg = run(&config(Algorithm::FedAvg, 2, 3, 6), &tiny_model(), &c.clients, None).unwrap();
    let cfg = pfedcr_core::fedsim::TrainConfig { flags: AblationFlags::ALL_OFF, ..config(Algorithm::PFedCr, 2, 3, 6) };
    let off = run(&cfg, &tiny_model(), &c.clients, None).unwrap();
    assert_eq!(fedavg.reports.len(), 3);
    for (a, b) in fedavg.reports.iter().zip(&off.reports) {
        assert_eq!(a.clients, b.clients);
        assert_eq!(a.cross, b.cross);
        assert_eq!(a.buckets, b.buckets);
    }
    assert!(fedavg.state.global.as_ref().unwrap().values_bits_eq(off.state.global.as_ref().unwrap(), GroupSet::ALL));
}

#[test]
fn fedprox_without_mu_is_fedavg() {
    let c = corpus(2, 8, 7);
    let fedavg = run(&config(Algorithm::FedAvg, 2, 2, 7), &tiny_model(), &c.clients, None).unwrap();
    let cfg = pfedcr_core::fedsim::TrainConfig { fedprox_mu: 0.0, ..config(Algorithm::FedProx, 2, 2, 7) };
    let prox = run(&cfg, &tiny_model(), &c.clients, None).unwrap();
    for (a, b) in fedavg.reports.iter().zip(&prox.reports) {
        assert_eq!(a.clients, b.clients);
    }
    let mu = pfedcr_core::fedsim::TrainConfig { fedprox_mu: 0.5, ..cfg };
    let pulled = run(&mu, &tiny_model(), &c.clients, None).unwrap();
    assert!(!pulled.state.global.unwrap().values_bits_eq(fedavg.state.global.as_ref().unwrap(), GroupSet::ALL));
    let negative = pfedcr_core::fedsim::TrainConfig { fedprox_mu: -1.0, ..mu };
    assert!(run(&negative, &tiny_model(), &c.clients, None).is_err());
}

#[test]
fn one_round_one_client_reduction() {
    // T = 1, K = 1, no server step: the averaged upload is the midpoint of
    // the stage-1 model and the initial global model.
    let c = corpus(1, 8, 8);
    let cfg = pfedcr_core::fedsim::TrainConfig {
        server_epochs: 0,
        flags: AblationFlags { stage2: false, ..AblationFlags::ALL_ON },
        aggregate_source: AggregateSource::Averaged,
        ..config(Algorithm::PFedCr, 1, 1, 8)
    };
    let out = run(&cfg, &tiny_model(), &c.clients, Some(&c.virtual_data)).unwrap();
    let model = Crnn::new(out.model_config.clone()).unwrap();
    let init: ParamSet = model.init(derive_seed(8, Tag::ModelInit, &[]));
    let local = &out.state.locals[0];
    let global = out.state.global.as_ref().unwrap();
    for i in 0..global.len() {
        assert_eq!(global.get(i).value.data(), midpoint_oracle(local, &init, i).as_slice());
    }
}

#[test]
fn personalized_body_and_head_are_midpoints() {
    let c = corpus(2, 8, 9);
    let cfg = pfedcr_core::fedsim::TrainConfig {
        flags: AblationFlags { use_virtual_data: false, ..AblationFlags::ALL_ON },
        ..config(Algorithm::PFedCr, 2, 1, 9)
    };
    let out = run(&cfg, &tiny_model(), &c.clients, None).unwrap();
    let model = Crnn::new(out.model_config.clone()).unwrap();
    let broadcast: ParamSet = model.init(derive_seed(9, Tag::ModelInit, &[]));
    for (k, personal) in out.state.personalized.iter().enumerate() {
        for (i, p) in personal.iter().enumerate() {
            if p.group() != Group::Eca {
                assert_eq!(p.value.data(), midpoint_oracle(&out.state.locals[k], &broadcast, i).as_slice(), "client {k} {}", p.name());
            }
        }
    }
}

#[test]
fn channel_carries_parameters_only_and_aggregates_once_per_round() {
    let c = corpus(3, 6, 10);
    let out = run(&config(Algorithm::PFedCr, 3, 3, 10), &tiny_model(), &c.clients, Some(&c.virtual_data)).unwrap();
    let mut aggregates = vec![0; 3];
    let mut uploads = vec![0; 3];
    for e in out.channel.events() {
        match *e {
            Event::Transfer { round, direction, payload, .. } => {
                assert_eq!(payload, "params");
                if direction == Direction::Upload {
                    uploads[round] += 1;
                }
            }
            Event::Aggregate { round, uploads: n } => {
                assert_eq!(n, 3);
                aggregates[round] += 1;
            }
        }
    }
    assert_eq!(aggregates, [1, 1, 1]);
    assert_eq!(uploads, [3, 3, 3]);

    let local = run(&config(Algorithm::Local, 3, 2, 10), &tiny_model(), &c.clients, None).unwrap();
    assert!(local.channel.events().is_empty());
}

#[test]
fn equal_seeds_give_identical_reports() {
    let c = corpus(2, 6, 11);
    let cfg = config(Algorithm::PFedCr, 2, 2, 11);
    let a = run(&cfg, &tiny_model(), &c.clients, Some(&c.virtual_data)).unwrap();
    let b = run(&cfg, &tiny_model(), &c.clients, Some(&c.virtual_data)).unwrap();
    assert_eq!(a.reports, b.reports);
    for (x, y) in a.state.personalized.iter().zip(&b.state.personalized) {
        assert!(x.values_bits_eq(y, GroupSet::ALL));
    }
}

#[test]
fn local_runs_rounds_times_epochs() {
    // standalone training over T rounds equals T consecutive calls with the
    // same per-round scales and streams
    let c = corpus(1, 6, 12);
    let cfg = pfedcr_core::fedsim::TrainConfig { local_epochs: 2, ..config(Algorithm::Local, 1, 3, 12) };
    let out = run(&cfg, &tiny_model(), &c.clients, None).unwrap();
    let model = Crnn::new(out.model_config.clone()).unwrap();
    let mut p: ParamSet = model.init(derive_seed(12, Tag::ModelInit, &[]));
    for t in 0..3 {
        let scale = pfedcr_core::optim::cosine_round_scale(t, 3).unwrap();
        let mut rng = stream(12, Tag::ClientOrder, &[0, t as u64, 0]);
        local_train_stage1(&model, &mut p, &c.clients[0].train, &cfg, false, scale, None, &mut rng).unwrap();
    }
    assert!(p.values_bits_eq(&out.state.locals[0], GroupSet::ALL));
}

#[test]
fn configuration_errors() {
    let c = corpus(2, 4, 13);
    assert!(run(&config(Algorithm::PFedCr, 2, 1, 13), &tiny_model(), &c.clients, None).is_err());
    assert!(run(&config(Algorithm::FedAvg, 3, 1, 13), &tiny_model(), &c.clients, None).is_err());
    let zero = pfedcr_core::fedsim::TrainConfig { rounds: 0, ..config(Algorithm::FedAvg, 2, 1, 13) };
    assert!(run(&zero, &tiny_model(), &c.clients, None).is_err());
}
