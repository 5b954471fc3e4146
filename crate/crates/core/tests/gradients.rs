//! Analytic gradients of every tape op against central differences.

mod common;

use common::*;
use tribosign_core::nn::{BatchNorm1d, Conv1d, LayerNorm, Linear, NTensor, ParamStore, Tape};
use tribosign_core::rng::rng_from;

fn assert_close(name: &str, err: f64) {
    assert!(err < FD_TOL, "{name}: max relative error {err:e}");
}

#[test]
fn elementwise_ops() {
    let mut rng = rng_from(11);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[3, 4], &mut rng);
    assert_close("add", check_inputs(&[a.clone(), b.clone()], 1, &|t, v| t.add(v[0], v[1])));
    assert_close("mul", check_inputs(&[a, b], 2, &|t, v| t.mul(v[0], v[1])));
    let x = randn_away_from_zero(&[3, 5], &mut rng);
    assert_close("relu", check_inputs(&[x], 3, &|t, v| Ok(t.relu(v[0]))));
}

#[test]
fn linear_and_concat() {
    let mut rng = rng_from(12);
    let x = randn(&[4, 6], &mut rng);
    let w = randn(&[3, 6], &mut rng);
    let b = randn(&[3], &mut rng);
    assert_close("linear", check_inputs(&[x, w, b], 4, &|t, v| t.linear(v[0], v[1], v[2])));
    let p = randn(&[2, 3], &mut rng);
    let q = randn(&[2, 5], &mut rng);
    assert_close("concat", check_inputs(&[p, q], 5, &|t, v| t.concat(&[v[0], v[1]])));
}

#[test]
fn conv_with_and_without_padding() {
    let mut rng = rng_from(13);
    for (k, pad, len) in [(3, 1, 7), (3, 0, 6), (5, 2, 9), (1, 0, 4)] {
        let x = randn(&[2, 3, len], &mut rng);
        let w = randn(&[4, 3, k], &mut rng);
        let b = randn(&[4], &mut rng);
        let err = check_inputs(&[x, w, b], 6, &|t, v| t.conv1d(v[0], v[1], v[2], pad));
        assert_close(&format!("conv k={k} pad={pad}"), err);
    }
}

#[test]
fn pooling() {
    let mut rng = rng_from(14);
    let x = shuffled_grid(&[2, 3, 7], &mut rng);
    assert_close("maxpool", check_inputs(&[x], 7, &|t, v| t.maxpool1d(v[0])));
    let x = randn(&[2, 3, 5], &mut rng);
    assert_close("meanpool", check_inputs(&[x], 8, &|t, v| t.mean_pool1d(v[0])));
}

#[test]
fn normalization_layers() {
    let mut rng = rng_from(15);
    let dummy = (NTensor::zeros(&[3]), NTensor::filled(&[3], 1.0));
    let mut store = ParamStore::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 3);
    for shape in [vec![5, 3], vec![4, 3, 6]] {
        let x = randn(&shape, &mut rng);
        let g = randn(&[3], &mut rng);
        let b = randn(&[3], &mut rng);
        let err = check_inputs(&[x, g, b], 9, &|t, v| {
            t.batch_norm(v[0], v[1], v[2], (&dummy.0, &dummy.1), (bn.running_mean, bn.running_var), 0.1, 1e-5)
        });
        assert_close(&format!("batchnorm {shape:?}"), err);
    }
    let x = randn(&[4, 6], &mut rng);
    let g = randn(&[6], &mut rng);
    let b = randn(&[6], &mut rng);
    assert_close("layernorm", check_inputs(&[x, g, b], 10, &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)));
}

#[test]
fn dropout_softmax_and_losses() {
    let mut rng = rng_from(16);
    let x = randn(&[4, 6], &mut rng);
    assert_close("dropout", check_inputs(&[x.clone()], 11, &|t, v| Ok(t.dropout(v[0], 0.4))));
    assert_close("softmax", check_inputs(&[x.clone()], 12, &|t, v| t.softmax(v[0])));
    let targets = [0, 5, 2, 3];
    assert_close("cross_entropy", check_inputs(&[x.clone()], 13, &|t, v| t.cross_entropy(v[0], &targets)));
    for gamma in [0.0, 1.0, 2.0, 3.5] {
        let err = check_inputs(&[x.clone()], 14, &|t, v| t.focal_loss(v[0], &targets, 0.75, gamma));
        assert_close(&format!("focal gamma={gamma}"), err);
    }
}

#[test]
fn composed_layers_through_param_store() {
    let mut rng = rng_from(17);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "conv", 3, 4, 3, &mut rng);
    let bn = BatchNorm1d::new(&mut store, "bn", 4);
    let fc = Linear::new(&mut store, "fc", 4, 6, &mut rng);
    let ln = LayerNorm::new(&mut store, "ln", 6);
    let out = Linear::new(&mut store, "out", 6, 3, &mut rng);
    let x = randn(&[5, 3, 8], &mut rng);
    let targets = [0, 1, 2, 1, 0];
    let forward = |tape: &mut Tape, s: &ParamStore| {
        let h = tape.leaf(x.clone());
        let h = conv.forward(tape, s, h).unwrap();
        let h = bn.forward(tape, s, h).unwrap();
        let h = tape.relu(h);
        let h = tape.maxpool1d(h).unwrap();
        let h = tape.mean_pool1d(h).unwrap();
        let h = fc.forward(tape, s, h).unwrap();
        let h = ln.forward(tape, s, h).unwrap();
        let h = tape.relu(h);
        let h = tape.dropout(h, 0.3);
        let z = out.forward(tape, s, h).unwrap();
        tape.focal_loss(z, &targets, 1.0, 2.0).unwrap()
    };
    assert_close("composed", check_params(&mut store, 18, 1000, &forward));
}
