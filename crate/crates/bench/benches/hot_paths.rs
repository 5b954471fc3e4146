use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tribosign_core::baselines::KnnModel;
use tribosign_core::dsp::mfcc::MfccExtractor;
use tribosign_core::model::{MultiBranchNet, Network};
use tribosign_core::nn::Tape;
use tribosign_core::pipeline::mfcc_dataset;
use tribosign_core::preprocess::{per_sequence_normalize, segment};
use tribosign_core::synth::{generate_corpus, SynthConfig};
use tribosign_core::{MfccConfig, SequenceWindow};

fn windows(n_per_class: usize) -> Vec<SequenceWindow> {
    let cfg = SynthConfig {
        recordings_per_class: n_per_class,
        ..SynthConfig::default()
    };
    let recs = generate_corpus(&cfg).expect("corpus");
    recs.iter().flat_map(|r| segment(r, 200)).map(|w| per_sequence_normalize(&w)).collect()
}

fn mfcc(c: &mut Criterion) {
    let ws = windows(3);
    let ex = MfccExtractor::new(MfccConfig::default()).expect("config");
    c.bench_function("mfcc_extract_window_200", |b| b.iter(|| ex.extract(black_box(&ws[0])).expect("extract")));
}

fn multibranch(c: &mut Criterion) {
    let ws = windows(3);
    let batch = mfcc_dataset(&ws[..32], &MfccConfig::default()).expect("features").inputs;
    let net = MultiBranchNet::new(22, 12, 0).expect("net");
    c.bench_function("multibranch_forward_batch_32", |b| {
        b.iter(|| {
            let mut tape = Tape::eval();
            let out = net.forward(&mut tape, black_box(&batch)).expect("forward");
            black_box(tape.value(out).data()[0])
        })
    });
}

fn knn(c: &mut Criterion) {
    let ws = windows(10);
    let rows: Vec<Vec<f64>> = ws.iter().map(SequenceWindow::flatten).collect();
    let labels: Vec<_> = ws.iter().map(|w| w.label).collect();
    let model = KnnModel::fit(&rows, &labels, 5).expect("fit");
    c.bench_function("knn5_predict_one", |b| b.iter(|| model.predict(black_box(&rows[0])).expect("predict")));
}

criterion_group!(benches, mfcc, multibranch, knn);
criterion_main!(benches);
