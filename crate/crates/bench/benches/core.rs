use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pfedcr_bench::{client, desk_model, ALPHABET};
use pfedcr_core::ctc::ctc_loss;
use pfedcr_core::datagen::{render_line, GlyphAtlas, Style};
use pfedcr_core::fedsim::{aggregate, train_epochs, StepConfig};
use pfedcr_core::optim::AdadeltaConfig;
use pfedcr_core::rng::{stream, Tag};
use pfedcr_core::{Crnn, GroupSet, ParamSet, Tensor};

fn recognizer(c: &mut Criterion) {
    let model = Crnn::new(desk_model()).unwrap();
    let params: ParamSet = model.init(1);
    let data = client(16);
    let sample = &data.train.samples()[0];
    let image = sample.batch();
    c.bench_function("forward one line", |b| b.iter(|| model.forward(&params, &image).unwrap()));
    c.bench_function("loss and gradient one line", |b| {
        b.iter_batched_ref(
            || params.clone(),
            |p| model.loss_and_grad(p, &image, std::slice::from_ref(&sample.label), 1.0, GroupSet::ALL).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let optimizer = AdadeltaConfig::default();
    let step = StepConfig {
        epochs: 1,
        batch_size: 16,
        optimizer: &optimizer,
        lr_scale: 1.0,
        trainable: GroupSet::ALL,
        prox: None,
    };
    c.bench_function("epoch of 16 lines", |b| {
        b.iter_batched_ref(
            || params.clone(),
            |p| train_epochs(&model, p, &data.train, &step, &mut stream(0, Tag::ClientOrder, &[0])).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn objective(c: &mut Criterion) {
    let (frames, classes) = (40, ALPHABET + 1);
    let logits = Tensor::<f32>::from_fn(&[frames, 1, classes], |i| ((i * 7919) % 13) as f32 * 0.1 - 0.6);
    let label = pfedcr_core::ctc::LabelSeq::new(vec![3, 9, 9, 27, 1, 40, 12, 5]).unwrap();
    c.bench_function("ctc 40 frames 8 symbols", |b| b.iter(|| ctc_loss(&logits, std::slice::from_ref(&label)).unwrap()));
}

fn protocol(c: &mut Criterion) {
    let model = Crnn::new(desk_model()).unwrap();
    let sets: Vec<ParamSet> = (0..3).map(|s| model.init(s)).collect();
    let refs: Vec<&ParamSet> = sets.iter().collect();
    c.bench_function("aggregate 3 clients", |b| b.iter(|| aggregate(&refs).unwrap()));
    let atlas = GlyphAtlas::generate(ALPHABET, 0).unwrap();
    let label = pfedcr_core::ctc::LabelSeq::new(vec![1, 2, 3, 4, 5, 6, 7]).unwrap();
    let style = Style::default();
    c.bench_function("render 7-character line", |b| {
        b.iter(|| render_line(&atlas, &label, &style, &mut stream(0, Tag::ClientTrain, &[0])).unwrap())
    });
}

criterion_group!(benches, recognizer, objective, protocol);
criterion_main!(benches);
