//! Finite-difference gradient checking shared by the integration tests.
#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use tribosign_core::model::Network;
use tribosign_core::nn::{LossKind, NTensor, ParamStore, Tape, Var};
use tribosign_core::rng::{rng_from, Rng};
use tribosign_core::Result;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor so near-zero gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn randn(shape: &[usize], rng: &mut Rng) -> NTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    NTensor::new(shape.to_vec(), data).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
pub fn randn_away_from_zero(shape: &[usize], rng: &mut Rng) -> NTensor {
    let mut t = randn(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + 0.05);
    }
    t
}

/// Distinct values spaced well apart, in random order (max-pool safe).
pub fn shuffled_grid(shape: &[usize], rng: &mut Rng) -> NTensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.1).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    NTensor::new(shape.to_vec(), vals).unwrap()
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Scalar objective `sum_i c_i y_i` with fixed random `c`; each evaluation
/// rebuilds the tape from the same seed so dropout masks repeat.
fn objective(inputs: &[NTensor], seed: u64, build: &Build) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::train(rng_from(seed));
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &vars).unwrap();
    let mut crng = rng_from(seed ^ 0x5eed);
    let coeffs = (0..tape.value(y).len()).map(|_| crng.random_range(-1.0..1.0)).collect();
    let s = tape.weighted_sum(y, coeffs).unwrap();
    (tape, vars, s)
}

/// Largest relative error between analytic and central-difference gradients
/// over every element of every input.
pub fn check_inputs(inputs: &[NTensor], seed: u64, build: &Build) -> f64 {
    let (tape, vars, s) = objective(inputs, seed, build);
    let grads = tape.backward(s);
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.to_vec();
                perturbed[i].data_mut()[j] += delta;
                let (t, _, s) = objective(&perturbed, seed, build);
                t.value(s).data()[0]
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], fd));
        }
    }
    worst
}

/// Same check against parameters held in a [`ParamStore`]. `forward` builds
/// the scalar loss; at most `per_tensor` entries of each parameter are probed.
pub fn check_params(
    store: &mut ParamStore,
    seed: u64,
    per_tensor: usize,
    forward: &dyn Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let loss_at = |store: &ParamStore| {
        let mut tape = Tape::train(rng_from(seed));
        let l = forward(&mut tape, store);
        tape.value(l).data()[0]
    };
    store.zero_grads();
    let mut tape = Tape::train(rng_from(seed));
    let l = forward(&mut tape, store);
    let grads = tape.backward(l);
    tape.accumulate_param_grads(&grads, store);
    let mut pick = rng_from(seed.wrapping_add(1));
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).len();
        let probes: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        for j in probes {
            let analytic = store.grad(id)[j];
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = loss_at(store);
            store.value_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = loss_at(store);
            store.value_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic, fd));
        }
    }
    worst
}

/// Same check for a whole [`Network`]: the loss is `loss` applied to the
/// logits of `batch`, and at most `per_tensor` entries of each parameter
/// tensor are probed.
pub fn check_network(
    net: &mut dyn Network,
    batch: &NTensor,
    targets: &[usize],
    loss: LossKind,
    seed: u64,
    per_tensor: usize,
) -> f64 {
    let loss_at = |net: &dyn Network| {
        let mut tape = Tape::train(rng_from(seed));
        let z = net.forward(&mut tape, batch).unwrap();
        let l = loss.apply(&mut tape, z, targets).unwrap();
        tape.value(l).data()[0]
    };
    net.store_mut().zero_grads();
    let mut tape = Tape::train(rng_from(seed));
    let z = net.forward(&mut tape, batch).unwrap();
    let l = loss.apply(&mut tape, z, targets).unwrap();
    let grads = tape.backward(l);
    tape.accumulate_param_grads(&grads, net.store_mut());
    let mut pick = rng_from(seed.wrapping_add(1));
    let mut worst: f64 = 0.0;
    for id in net.store().ids().collect::<Vec<_>>() {
        let n = net.store().value(id).len();
        let probes: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        for j in probes {
            let analytic = net.store().grad(id)[j];
            let orig = net.store().value(id).data()[j];
            net.store_mut().value_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = loss_at(net);
            net.store_mut().value_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = loss_at(net);
            net.store_mut().value_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic, fd));
        }
    }
    worst
}
