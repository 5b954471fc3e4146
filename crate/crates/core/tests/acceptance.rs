//! Acceptance suite. Each test checks one criterion and writes a single
//! `PASS`/`FAIL` line to stderr (bypassing output capture) before asserting.
//! Every tolerance is pinned here.

mod common;

use std::f64::consts::{LN_2, PI};
use std::io::Write as _;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use tribosign_core::augment::{
    add_noise, augment_dataset, augment_once, magnitude_scale, scale_by, shift_by, temporal_shift, time_warp,
    AugmentConfig,
};
use tribosign_core::baselines::cross_validate;
use tribosign_core::dsp::mfcc::mfcc;
use tribosign_core::metrics::metrics;
use tribosign_core::model::{predict_proba, Checkpoint, ModelKind, MultiBranchNet, Network, Predictor};
use tribosign_core::nn::{BatchNorm1d, CosineRestartSchedule, LossKind, NTensor, ParamStore, Tape};
use tribosign_core::pipeline::{
    ablate_window, compare_models, quality_control, raw_windows, ModelChoice, ModelRecipes, PipelineConfig,
};
use tribosign_core::preprocess::segment;
use tribosign_core::rng::{rng_from, Rng};
use tribosign_core::synth::{generate_corpus, SynthConfig};
use tribosign_core::{ClassLabel, ConfusionMatrix, Frame, MfccConfig, Recording, SequenceWindow, NUM_CLASSES};

const MFCC_ABS_TOL: f64 = 1e-6;
const MFCC_BUDGET: Duration = Duration::from_secs(10);
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const FOCAL_TOL: f64 = 1e-12;
const LR_TOL: f64 = 1e-15;
const ORDERING_MARGIN: f64 = 0.05;
const KNN_CV_RANGE: (f64, f64) = (0.60, 0.85);
const ORDERING_BUDGET: Duration = Duration::from_secs(15 * 60);
const CHUNK_RATIO_RANGE: (f64, f64) = (1.8, 2.2);
const METRICS_TOL: f64 = 1e-12;
const SEEDS: [u64; 3] = [0, 1, 2];

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {id:>2} {} {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok, "{line}");
}

fn random_window(len: usize, rng: &mut Rng) -> SequenceWindow {
    SequenceWindow {
        data: (0..len)
            .map(|_| {
                let mut f: Frame = [0.0; 5];
                for v in &mut f {
                    *v = StandardNormal.sample(rng);
                }
                f
            })
            .collect(),
        label: ClassLabel::from_index(0).unwrap(),
        source_id: "random".into(),
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn window_bits(w: &SequenceWindow) -> Vec<u64> {
    bits(&w.flatten())
}

/// Loop-based MFCC of one channel: explicit DFT, triangle filters, log and
/// DCT sums, temporal DCT axis.
fn naive_channel_mfcc(x: &[f64], cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let (fl, hop, n_fft, n_mels) = (cfg.frame_len, cfg.hop, cfg.n_fft, cfg.n_mels);
    let n_frames = (x.len() - fl) / hop + 1;
    let to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let from_mel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (m_lo, m_hi) = (to_mel(cfg.f_min), to_mel(cfg.f_max));
    let mut edges = Vec::new();
    for i in 0..n_mels + 2 {
        edges.push(from_mel(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64));
    }
    let mut logmel = vec![vec![0.0; n_mels]; n_frames];
    for t in 0..n_frames {
        let mut frame = vec![0.0; n_fft];
        for n in 0..fl {
            let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / (fl - 1) as f64).cos();
            frame[n] = x[t * hop + n] * w;
        }
        let mut power = vec![0.0; n_fft / 2 + 1];
        for (k, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in frame.iter().enumerate() {
                let ang = 2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += v * ang.cos();
                im -= v * ang.sin();
            }
            *p = (re * re + im * im) / n_fft as f64;
        }
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut e = 0.0;
            for (k, p) in power.iter().enumerate() {
                let f = k as f64 * cfg.sample_rate / n_fft as f64;
                let g = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                e += g * p;
            }
            logmel[t][m] = (e + cfg.eps).ln();
        }
    }
    let mut out = vec![vec![0.0; cfg.n_mfcc]; n_frames];
    for j in 0..cfg.n_mfcc {
        for (k, row) in out.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / n_frames as f64).sqrt() } else { (2.0 / n_frames as f64).sqrt() };
            let mut s = 0.0;
            for (t, lm) in logmel.iter().enumerate() {
                s += lm[j] * (PI * (2 * t + 1) as f64 * k as f64 / (2 * n_frames) as f64).cos();
            }
            row[j] = scale * s;
        }
    }
    out
}

#[test]
fn criterion_01_mfcc_matches_naive_oracle() {
    let cfg = MfccConfig::default();
    let mut rng = rng_from(101);
    let windows: Vec<SequenceWindow> = (0..100).map(|_| random_window(200, &mut rng)).collect();
    let start = Instant::now();
    let fast: Vec<_> = windows.iter().map(|w| mfcc(w, &cfg).unwrap()).collect();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for (w, t) in windows.iter().zip(&fast) {
        for c in 0..5 {
            let oracle = naive_channel_mfcc(&w.channel(c), &cfg);
            for (f, row) in oracle.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    worst = worst.max((t.get(c, f, k) - v).abs());
                }
            }
        }
    }
    let ok = worst <= MFCC_ABS_TOL && elapsed < MFCC_BUDGET;
    verdict(1, "mfcc oracle", ok, &format!("max abs diff {worst:.2e} (tol {MFCC_ABS_TOL:e}), {elapsed:.2?} for 100 windows"));
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = rng_from(202);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| worst.push((name.to_string(), err));

    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[3, 4], &mut rng);
    record("add", check_inputs(&[a.clone(), b.clone()], 1, &|t, v| t.add(v[0], v[1])));
    record("mul", check_inputs(&[a, b], 2, &|t, v| t.mul(v[0], v[1])));
    let x = randn_away_from_zero(&[3, 5], &mut rng);
    record("relu", check_inputs(&[x], 3, &|t, v| Ok(t.relu(v[0]))));
    let (x, w, bias) = (randn(&[4, 6], &mut rng), randn(&[3, 6], &mut rng), randn(&[3], &mut rng));
    record("linear", check_inputs(&[x, w, bias], 4, &|t, v| t.linear(v[0], v[1], v[2])));
    let (p, q) = (randn(&[2, 3], &mut rng), randn(&[2, 5], &mut rng));
    record("concat", check_inputs(&[p, q], 5, &|t, v| t.concat(&[v[0], v[1]])));
    let (x, w, bias) = (randn(&[2, 3, 7], &mut rng), randn(&[4, 3, 3], &mut rng), randn(&[4], &mut rng));
    record("conv1d", check_inputs(&[x, w, bias], 6, &|t, v| t.conv1d(v[0], v[1], v[2], 1)));
    let x = shuffled_grid(&[2, 3, 7], &mut rng);
    record("maxpool1d", check_inputs(&[x], 7, &|t, v| t.maxpool1d(v[0])));
    let x = randn(&[2, 3, 5], &mut rng);
    record("mean_pool1d", check_inputs(&[x], 8, &|t, v| t.mean_pool1d(v[0])));
    let mut store = ParamStore::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 3);
    let stats = (NTensor::zeros(&[3]), NTensor::filled(&[3], 1.0));
    let (x, g, bb) = (randn(&[4, 3, 6], &mut rng), randn(&[3], &mut rng), randn(&[3], &mut rng));
    record(
        "batch_norm",
        check_inputs(&[x, g, bb], 9, &|t, v| {
            t.batch_norm(v[0], v[1], v[2], (&stats.0, &stats.1), (bn.running_mean, bn.running_var), 0.1, 1e-5)
        }),
    );
    let (x, g, bb) = (randn(&[4, 6], &mut rng), randn(&[6], &mut rng), randn(&[6], &mut rng));
    record("layer_norm", check_inputs(&[x, g, bb], 10, &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)));
    let x = randn(&[4, 6], &mut rng);
    record("dropout", check_inputs(&[x.clone()], 11, &|t, v| Ok(t.dropout(v[0], 0.4))));
    record("softmax", check_inputs(&[x.clone()], 12, &|t, v| t.softmax(v[0])));
    let targets = [0, 5, 2, 3];
    record("cross_entropy", check_inputs(&[x.clone()], 13, &|t, v| t.cross_entropy(v[0], &targets)));
    record("focal_loss", check_inputs(&[x], 14, &|t, v| t.focal_loss(v[0], &targets, 0.75, 2.0)));

    // Whole network: small input, every parameter tensor probed.
    let mut net = MultiBranchNet::new(5, 3, 15).unwrap();
    let batch = randn(&[3, 5, 5, 3], &mut rng);
    let err = check_network(&mut net, &batch, &[1, 4, 9], LossKind::Focal { alpha: 1.0, gamma: 2.0 }, 16, 4);
    record("multibranch", err);

    let elapsed = start.elapsed();
    let (name, max) = worst.iter().cloned().fold((String::new(), 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let ok = max < FD_TOL && elapsed < GRAD_BUDGET;
    verdict(
        2,
        "finite differences",
        ok,
        &format!("{} checks, worst {max:.2e} ({name}), tol {FD_TOL:e}, h {FD_STEP:e}, {elapsed:.2?}", worst.len()),
    );
}

#[test]
fn criterion_03_segmentation_arithmetic() {
    let rec = |n: usize| Recording {
        id: "r".into(),
        label: ClassLabel::from_index(0).unwrap(),
        samples: (0..n).map(|i| [i as f64; 5]).collect(),
    };
    let ws = segment(&rec(1028), 50);
    let mut ok = ws.len() == 20 && ws[0].data[0][0] == 28.0 && ws.iter().all(|w| w.len() == 50);
    let mut rng = rng_from(303);
    for _ in 0..1000 {
        let n = rng.random_range(0..5000);
        let w = rng.random_range(1..=400);
        let ws = segment(&rec(n), w);
        let skip = n - (n / w) * w;
        let flat: Vec<f64> = ws.iter().flat_map(|s| s.data.iter().map(|f| f[0])).collect();
        let expect: Vec<f64> = (skip..n).map(|i| i as f64).collect();
        ok &= ws.len() == n / w && flat == expect;
    }
    verdict(3, "segmentation", ok, "1028/50 gives 20 windows after dropping 28; 1000 random (N, w) cases");
}

#[test]
fn criterion_04_frame_count_identity() {
    let cfg = MfccConfig::default();
    let t = mfcc(&random_window(200, &mut rng_from(404)), &cfg).unwrap();
    let ok = cfg.n_frames(200) == 22 && t.shape() == [5, 22, 12] && t.values.len() == 1320;
    verdict(4, "frame count", ok, &format!("shape {:?}, {} values", t.shape(), t.values.len()));
}

#[test]
fn criterion_05_focal_loss_reductions() {
    let mut rng = rng_from(505);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let b = rng.random_range(1..16);
        let logits = randn(&[b, NUM_CLASSES], &mut rng);
        let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
        let mut tape = Tape::eval();
        let z = tape.leaf(logits);
        let fl = tape.focal_loss(z, &targets, 1.0, 0.0).unwrap();
        let ce = tape.cross_entropy(z, &targets).unwrap();
        worst = worst.max((tape.value(fl).data()[0] - tape.value(ce).data()[0]).abs());
    }
    let mut tape = Tape::eval();
    let z = tape.leaf(NTensor::new(vec![1, 2], vec![0.3, 0.3]).unwrap());
    let half = tape.focal_loss(z, &[0], 1.0, 2.0).unwrap();
    let half_err = (tape.value(half).data()[0] - 0.25 * LN_2).abs();
    let ok = worst <= FOCAL_TOL && half_err <= FOCAL_TOL;
    verdict(5, "focal loss", ok, &format!("gamma=0 vs CE {worst:.1e}, p_t=0.5 case {half_err:.1e}, tol {FOCAL_TOL:e}"));
}

#[test]
fn criterion_06_scheduler_trace() {
    let s = CosineRestartSchedule {
        t0: 10,
        t_mult: 2,
        eta_min: 0.0,
    };
    let lr_max = 1e-3;
    let hand = |pos: f64, len: f64| lr_max * (1.0 + (PI * pos / len).cos()) / 2.0;
    // Cycles are [0, 10), [10, 30), [30, 70).
    let expected = [(0.0, hand(0.0, 10.0)), (5.0, hand(5.0, 10.0)), (10.0, hand(0.0, 20.0)), (15.0, hand(5.0, 20.0)), (30.0, hand(0.0, 40.0))];
    let mut ok = true;
    let mut trace = Vec::new();
    for (e, want) in expected {
        let got = s.lr_at(lr_max, e);
        ok &= (got - want).abs() <= LR_TOL;
        trace.push(format!("{e}:{got:.4e}"));
    }
    ok &= (expected[1].1 - 5e-4).abs() <= LR_TOL && (expected[3].1 - 8.536e-4).abs() < 1e-7;
    verdict(6, "scheduler trace", ok, &trace.join(" "));
}

#[test]
fn criterion_07_qualitative_ordering() {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let recs = generate_corpus(&SynthConfig {
            rng_seed: seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let pipeline = PipelineConfig::default().with_seed(seed);
        let (clean, _) = quality_control(&recs, &pipeline.qc).unwrap();
        let raw = raw_windows(&clean, pipeline.window);
        let rows: Vec<Vec<f64>> = raw.iter().map(SequenceWindow::flatten).collect();
        let labels: Vec<ClassLabel> = raw.iter().map(|w| w.label).collect();
        let cv = cross_validate(&rows, &labels, 5, 5, seed).unwrap().mean;
        let scores = compare_models(
            &recs,
            &pipeline,
            &ModelRecipes::default().with_seed(seed),
            &[ModelChoice::Multibranch, ModelChoice::SimpleNn, ModelChoice::Knn],
        )
        .unwrap();
        let (mb, nn, knn) = (scores[0].test_accuracy, scores[1].test_accuracy, scores[2].test_accuracy);
        ok &= (KNN_CV_RANGE.0..=KNN_CV_RANGE.1).contains(&cv);
        ok &= mb >= nn + ORDERING_MARGIN && mb >= knn + ORDERING_MARGIN;
        lines.push(format!("seed {seed}: cv {cv:.3} multibranch {mb:.3} simplenn {nn:.3} knn {knn:.3}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < ORDERING_BUDGET;
    verdict(7, "model ordering", ok, &format!("{}; {elapsed:.1?}", lines.join("; ")));
}

#[test]
fn criterion_08_window_size_trend() {
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let recs = generate_corpus(&SynthConfig {
            rng_seed: seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let pipeline = PipelineConfig::default().with_seed(seed);
        let rows = ablate_window(
            &recs,
            &[50, 100],
            ModelChoice::SimpleNn,
            &pipeline,
            &ModelRecipes::default().with_seed(seed),
        )
        .unwrap();
        let (clean, _) = quality_control(&recs, &pipeline.qc).unwrap();
        let oracle = |w: usize| clean.iter().map(|r| r.samples.len() / w).sum::<usize>();
        let ratio = rows[0].chunks as f64 / rows[1].chunks as f64;
        ok &= rows[0].chunks == oracle(50) && rows[1].chunks == oracle(100);
        ok &= (CHUNK_RATIO_RANGE.0..=CHUNK_RATIO_RANGE.1).contains(&ratio);
        ok &= rows[0].test_accuracy >= rows[1].test_accuracy;
        lines.push(format!(
            "seed {seed}: chunks {}/{} (ratio {ratio:.2}) acc {:.3} vs {:.3}",
            rows[0].chunks, rows[1].chunks, rows[0].test_accuracy, rows[1].test_accuracy
        ));
    }
    verdict(8, "window-size trend", ok, &lines.join("; "));
}

#[test]
fn criterion_09_augmentation_identities() {
    let mut rng = rng_from(909);
    let win = random_window(200, &mut rng);
    let same = |w: &SequenceWindow| window_bits(w) == window_bits(&win);
    let mut ok = same(&add_noise(&win, 0.0, &mut rng))
        && same(&time_warp(&win, 0.0, 4, &mut rng))
        && same(&scale_by(&win, 1.0))
        && same(&magnitude_scale(&win, 1.0, 1.0, &mut rng))
        && same(&shift_by(&win, 0))
        && same(&temporal_shift(&win, 0, &mut rng))
        && same(&augment_once(&win, &AugmentConfig::identity(), &mut rng));
    let always_zeroed = AugmentConfig {
        noise_sigma: 0.0,
        noise_p: 1.0,
        warp_sigma: 0.0,
        warp_p: 1.0,
        scale_lo: 1.0,
        scale_hi: 1.0,
        scale_p: 1.0,
        shift_max: 0,
        shift_p: 1.0,
        ..AugmentConfig::default()
    };
    ok &= same(&augment_once(&win, &always_zeroed, &mut rng));

    let set: Vec<SequenceWindow> = (0..17).map(|_| random_window(100, &mut rng)).collect();
    let cfg = AugmentConfig {
        rng_seed: 9,
        ..AugmentConfig::default()
    };
    let a = augment_dataset(&set, &cfg).unwrap();
    let b = augment_dataset(&set, &cfg).unwrap();
    ok &= a.len() == 3 * set.len();
    ok &= a[..set.len()].iter().zip(&set).all(|(x, y)| window_bits(x) == window_bits(y));
    ok &= a.iter().zip(&b).all(|(x, y)| window_bits(x) == window_bits(y));
    verdict(9, "augmentation identities", ok, &format!("zeroed transforms are identity; {} -> {} windows; reruns bitwise equal", set.len(), a.len()));
}

#[test]
fn criterion_10_checkpoint_round_trip() {
    let mut net = MultiBranchNet::new(22, 12, 10).unwrap();
    // Non-trivial running statistics so buffers are exercised too.
    let mut rng = rng_from(1010);
    let table: Vec<(String, NTensor)> = net
        .store()
        .named_tensors()
        .into_iter()
        .map(|(name, mut t)| {
            if name.ends_with("running_mean") {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            } else if name.ends_with("running_var") {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
            }
            (name, t)
        })
        .collect();
    net.store_mut().load_named(&table).unwrap();
    let ck = Checkpoint {
        kind: ModelKind::Multibranch { n_frames: 22, n_coeffs: 12 },
        architecture: net.architecture(),
        epoch: 0,
        best_val_acc: 0.0,
        best_val_loss: 0.0,
        seed: 10,
        config: serde_json::json!({}),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gsc");
    ck.save(&net, &path).unwrap();
    let loaded = Predictor::load(&path).unwrap();
    let mut ok = true;
    let mut samples = Vec::new();
    for _ in 0..50 {
        let x = randn(&[1, 5, 22, 12], &mut rng);
        let before = predict_proba(&net, &x).unwrap();
        let (_, after) = loaded.predict(x.data()).unwrap();
        ok &= bits(&before) == bits(&after);
        samples.extend_from_slice(x.data());
    }
    let batch = NTensor::new(vec![50, 5, 22, 12], samples).unwrap();
    ok &= bits(&predict_proba(&net, &batch).unwrap()) == bits(&loaded.predict_batch(&batch).unwrap());
    verdict(10, "checkpoint round trip", ok, "50 random inputs, probabilities bitwise equal after save and load");
}

#[test]
fn criterion_11_metrics_identities() {
    let mut rng = rng_from(1111);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let counts: Vec<Vec<u64>> = (0..NUM_CLASSES)
            .map(|_| (0..NUM_CLASSES).map(|_| rng.random_range(0..40)).collect())
            .collect();
        let cm = ConfusionMatrix::from_counts(counts).unwrap();
        if cm.total() == 0 {
            continue;
        }
        let r = metrics(&cm).unwrap();
        worst = worst.max((r.recall_weighted - r.accuracy).abs());
    }
    let r = metrics(&ConfusionMatrix::from_counts(vec![vec![8, 2], vec![3, 7]]).unwrap()).unwrap();
    let binary = r.accuracy == 0.75 && r.per_class[0].precision == 8.0 / 11.0 && r.per_class[0].recall == 0.8;
    let ok = worst <= METRICS_TOL && binary;
    verdict(11, "metrics identities", ok, &format!("weighted recall vs accuracy {worst:.1e} over 1000 matrices; binary case exact: {binary}"));
}
