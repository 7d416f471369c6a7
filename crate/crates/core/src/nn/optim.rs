use super::network::{Network, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl OptState {
    pub fn new(net: &Network, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Invalid(format!("momentum must lie in [0,1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Invalid(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(OptState {
            lr,
            momentum,
            weight_decay,
            velocity: net.params().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
pub fn sgd_step(net: &mut Network, grads: &ParamGrads, opt: &mut OptState) -> Result<()> {
    let n_params = net.params().count();
    if grads.grads.len() != n_params || opt.velocity.len() != n_params {
        return Err(Error::Invalid(format!(
            "{n_params} parameter tensors, {} gradients, {} velocity buffers",
            grads.grads.len(),
            opt.velocity.len()
        )));
    }
    for ((p, g), v) in net.params().zip(&grads.grads).zip(&opt.velocity) {
        if p.shape() != g.shape() {
            return Err(Error::shape("gradient", p.shape(), g.shape()));
        }
        if p.shape() != v.shape() {
            return Err(Error::shape("velocity", p.shape(), v.shape()));
        }
    }
    let (lr, mu, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for ((p, g), v) in net.params_mut().zip(&grads.grads).zip(&mut opt.velocity) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// `initial_lr * factor^k` where `k` counts milestones already reached.
pub fn step_lr(initial_lr: f64, epoch: usize, milestones: &[usize], factor: f64) -> f64 {
    let reached = milestones.iter().filter(|&&m| m <= epoch).count();
    initial_lr * factor.powi(reached as i32)
}
