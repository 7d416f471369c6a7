#![allow(dead_code)]

use odlab::nn::{self, Network};
use odlab::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a-b| / max(|a|,|b|)`; pairs where both sides are below `floor`
/// are compared absolutely against `floor`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale < floor {
                (x - y).abs() / floor
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Parameters of `net` concatenated.
pub fn flat_params(net: &Network) -> Vec<f64> {
    net.params().flat_map(|p| p.data().to_vec()).collect()
}

pub fn set_flat_params(net: &mut Network, flat: &[f64]) {
    let mut offset = 0;
    for p in net.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
}

/// Max relative error between backprop and finite differences of the scalar
/// `sum(weights * logits)` with respect to every parameter.
pub fn network_gradcheck(net: &Network, x: &Tensor, weights: &Tensor, h: f64) -> f64 {
    let (_, trace) = nn::forward(net, x).unwrap();
    let analytic: Vec<f64> = nn::backward(net, &trace, weights)
        .unwrap()
        .grads
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();
    let base = flat_params(net);
    let numeric = fd_grad(
        |p| {
            let mut probe = net.clone();
            set_flat_params(&mut probe, p);
            let logits = probe.predict(x).unwrap();
            logits.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        },
        &base,
        h,
    );
    max_rel_err(&analytic, &numeric, 1e-6)
}
