//! Cross-entropy, output decay and its ablation variants, and the schedules
//! that drive the decay coefficient during training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdVariant {
    /// Squared distance of every logit to the decay level.
    #[default]
    Mse,
    /// KL divergence of the softmax from the uniform distribution.
    Kl,
    /// Absolute distance of every logit to the decay level.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    #[default]
    Constant,
    LinearUp,
    LinearDown,
    Warmup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdConfig {
    /// Decay level.
    pub c: f64,
    /// Decay coefficient.
    pub beta: f64,
    pub variant: OdVariant,
    pub schedule: BetaSchedule,
    pub warmup_peak_epoch: usize,
    /// Replace `c` after every epoch with the mean logit of that epoch.
    pub dynamic: bool,
}

impl Default for OdConfig {
    fn default() -> Self {
        OdConfig {
            c: 1e-3,
            beta: 0.0,
            variant: OdVariant::Mse,
            schedule: BetaSchedule::Constant,
            warmup_peak_epoch: 75,
            dynamic: false,
        }
    }
}

impl OdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::Config(format!("decay level c must be finite, got {}", self.c)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "decay coefficient beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.warmup_peak_epoch == 0 {
            return Err(Error::Config("warmup_peak_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    /// Unweighted output-decay term.
    pub od: f64,
    pub total: f64,
    pub effective_beta: f64,
    pub effective_c: f64,
}

fn non_empty(logits: &Tensor) -> Result<(usize, usize)> {
    let (b, n) = logits.dims2()?;
    if b == 0 || n == 0 {
        return Err(Error::Invalid("empty logits".into()));
    }
    Ok((b, n))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let mut out = logits.clone();
    let (_, n) = logits.dims2()?;
    for row in out.data_mut().chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / B`.
pub fn softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, n) = non_empty(logits)?;
    if labels.len() != b {
        return Err(Error::shape("labels", &[b], &[labels.len()]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: n,
        });
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for ((row, grow), &y) in logits
        .data()
        .chunks_exact(n)
        .zip(grad.data_mut().chunks_exact_mut(n))
        .zip(labels)
    {
        loss += log_sum_exp(row) - row[y];
        softmax_in_place(grow);
        grow[y] -= 1.0;
        grow.iter_mut().for_each(|g| *g /= b as f64);
    }
    Ok((loss / b as f64, grad))
}

/// `(1/2) * mean((f - c)^2)` over all logits.
pub fn od_loss(logits: &Tensor, c: f64) -> Result<f64> {
    non_empty(logits)?;
    let sq: f64 = logits.data().iter().map(|f| (f - c) * (f - c)).sum();
    Ok(0.5 * sq / logits.len() as f64)
}

/// Gradient of [`od_loss`]: `(f - c) / (B*N)` elementwise.
pub fn od_grad(logits: &Tensor, c: f64) -> Result<Tensor> {
    non_empty(logits)?;
    let scale = logits.len() as f64;
    let mut g = logits.clone();
    g.data_mut().iter_mut().for_each(|f| *f = (*f - c) / scale);
    Ok(g)
}

/// Mean over the batch of `KL(softmax(f_i) || uniform)`.
pub fn od_kl(logits: &Tensor) -> Result<(f64, Tensor)> {
    let (b, n) = non_empty(logits)?;
    if n < 2 {
        return Err(Error::Invalid("KL to uniform needs at least two classes".into()));
    }
    let ln_n = (n as f64).ln();
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (row, grow) in logits
        .data()
        .chunks_exact(n)
        .zip(grad.data_mut().chunks_exact_mut(n))
    {
        let lse = log_sum_exp(row);
        let logp: Vec<f64> = row.iter().map(|f| f - lse).collect();
        softmax_in_place(grow);
        // sum_j p_j log p_j is the negative entropy
        let neg_entropy: f64 = grow.iter().zip(&logp).map(|(p, lp)| p * lp).sum();
        loss += ln_n + neg_entropy;
        // d/df_k sum_j p_j log p_j = p_k (log p_k - sum_j p_j log p_j)
        for (g, lp) in grow.iter_mut().zip(&logp) {
            *g = *g * (lp - neg_entropy) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// `mean(|f - c|)` with subgradient 0 where `f == c`.
pub fn od_l1(logits: &Tensor, c: f64) -> Result<(f64, Tensor)> {
    non_empty(logits)?;
    let scale = logits.len() as f64;
    let loss = logits.data().iter().map(|f| (f - c).abs()).sum::<f64>() / scale;
    let mut g = logits.clone();
    g.data_mut().iter_mut().for_each(|f| {
        *f = if *f > c {
            1.0 / scale
        } else if *f < c {
            -1.0 / scale
        } else {
            0.0
        }
    });
    Ok((loss, g))
}

/// Decay coefficient for `epoch` under `kind`.
///
/// Linear schedules run between 0 and `base_beta` over `[0, total_epochs-1]`.
/// Warm-up rises linearly to `base_beta` at `warmup_peak_epoch` and falls
/// linearly back to 0 at the final epoch.
pub fn beta_schedule(
    kind: BetaSchedule,
    base_beta: f64,
    epoch: usize,
    total_epochs: usize,
    warmup_peak_epoch: usize,
) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Invalid(format!(
            "epoch {epoch} outside a {total_epochs}-epoch run"
        )));
    }
    if kind == BetaSchedule::Constant {
        return Ok(base_beta);
    }
    if total_epochs < 2 {
        return Err(Error::Invalid(format!(
            "{kind:?} schedule needs at least 2 epochs, got {total_epochs}"
        )));
    }
    let last = (total_epochs - 1) as f64;
    let e = epoch as f64;
    let beta = match kind {
        BetaSchedule::Constant => unreachable!(),
        BetaSchedule::LinearUp => base_beta * e / last,
        BetaSchedule::LinearDown => base_beta * (last - e) / last,
        BetaSchedule::Warmup => {
            if warmup_peak_epoch == 0 {
                return Err(Error::Invalid("warm-up peak must be positive".into()));
            }
            if epoch <= warmup_peak_epoch {
                base_beta * e / warmup_peak_epoch as f64
            } else {
                base_beta * (last - e) / (last - warmup_peak_epoch as f64)
            }
        }
    };
    Ok(beta.clamp(0.0, base_beta))
}

/// Streaming mean of every logit seen in the current epoch; after each epoch
/// the completed mean becomes the decay level for the next one.
#[derive(Debug, Clone, Default)]
pub struct DynamicDecayLevel {
    sum: f64,
    count: usize,
    completed: Option<f64>,
}

impl DynamicDecayLevel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, logits: &Tensor) {
        self.sum += logits.data().iter().sum::<f64>();
        self.count += logits.len();
    }

    /// Closes the epoch. Epochs without observations keep the previous level.
    pub fn end_epoch(&mut self) {
        if self.count > 0 {
            self.completed = Some(dynamic_decay_level(self.sum / self.count as f64));
        }
        self.sum = 0.0;
        self.count = 0;
    }

    /// Mean logit of the last completed epoch.
    pub fn level(&self) -> Result<f64> {
        self.completed
            .ok_or_else(|| Error::Invalid("no completed epoch to derive a decay level from".into()))
    }

    /// Level for the coming epoch, falling back to `initial` before the first
    /// epoch completes.
    pub fn level_or(&self, initial: f64) -> f64 {
        self.completed.unwrap_or(initial)
    }
}

/// The decay level used by the dynamic variant: the previous epoch's mean logit.
pub fn dynamic_decay_level(prev_epoch_logits_mean: f64) -> f64 {
    prev_epoch_logits_mean
}

/// `ce + effective_beta * od` and its gradient.
///
/// `dynamic_c` is the tracked level when `cfg.dynamic` is set; `None` means
/// no epoch has completed yet and `cfg.c` applies.
pub fn combined_loss(
    logits: &Tensor,
    labels: &[usize],
    cfg: &OdConfig,
    epoch: usize,
    total_epochs: usize,
    dynamic_c: Option<f64>,
) -> Result<(LossBreakdown, Tensor)> {
    let (ce, mut grad) = softmax_ce(logits, labels)?;
    let effective_beta = beta_schedule(
        cfg.schedule,
        cfg.beta,
        epoch,
        total_epochs,
        cfg.warmup_peak_epoch,
    )?;
    let effective_c = if cfg.dynamic {
        dynamic_c.unwrap_or(cfg.c)
    } else {
        cfg.c
    };
    let (od, od_g) = match cfg.variant {
        OdVariant::Mse => (od_loss(logits, effective_c)?, od_grad(logits, effective_c)?),
        OdVariant::Kl => od_kl(logits)?,
        OdVariant::L1 => od_l1(logits, effective_c)?,
    };
    if effective_beta != 0.0 {
        for (g, o) in grad.data_mut().iter_mut().zip(od_g.data()) {
            *g += effective_beta * o;
        }
    }
    let breakdown = LossBreakdown {
        ce,
        od,
        total: ce + effective_beta * od,
        effective_beta,
        effective_c,
    };
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ce_uniform_and_saturated() {
        let (l, _) = softmax_ce(&Tensor::full(&[3, 100], 0.7), &[0, 5, 99]).unwrap();
        assert_relative_eq!(l, 100f64.ln(), max_relative = 1e-14);
        let mut row = vec![0.0; 10];
        row[3] = 50.0;
        let (l, _) = softmax_ce(&t(&[&row]), &[3]).unwrap();
        assert!(l < 1e-20, "{l}");
    }

    #[test]
    fn ce_rejects_bad_labels() {
        let err = softmax_ce(&Tensor::zeros(&[1, 3]), &[3]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, n_classes: 3 }));
        assert!(softmax_ce(&Tensor::zeros(&[2, 3]), &[0]).is_err());
    }

    #[test]
    fn od_examples() {
        assert_eq!(od_loss(&Tensor::full(&[4, 3], 0.25), 0.25).unwrap(), 0.0);
        assert_eq!(od_loss(&t(&[&[0.0, 0.0]]), 1.0).unwrap(), 0.5);
        // 1/12 * sum (f - 0.001)^2, evaluated in exact rationals offline
        let v = od_loss(&t(&[&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]]), 1e-3).unwrap();
        assert_relative_eq!(v, 13.988_006 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(v, 1.165_667_166_666_666_7, max_relative = 1e-12);
        assert_eq!(od_grad(&t(&[&[2.0]]), 1.0).unwrap().data(), &[1.0]);
        assert!(od_grad(&Tensor::full(&[2, 2], 3.0), 3.0)
            .unwrap()
            .data()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn kl_limits() {
        let (l, g) = od_kl(&Tensor::full(&[2, 7], -1.5)).unwrap();
        assert!(l.abs() < 1e-15);
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
        let mut row = vec![0.0; 10];
        row[0] = 50.0;
        let (l, _) = od_kl(&t(&[&row])).unwrap();
        assert_relative_eq!(l, 10f64.ln(), max_relative = 1e-12);
        assert!(od_kl(&Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn l1_examples() {
        let (l, g) = od_l1(&Tensor::full(&[2, 2], 0.5), 0.5).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let (l, g) = od_l1(&t(&[&[0.0, 2.0]]), 1.0).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn combined_degenerates() {
        let logits = t(&[&[0.3, -1.2, 2.0], &[1.0, 0.0, -0.5]]);
        let labels = [2, 0];
        let cfg = OdConfig {
            beta: 0.0,
            ..OdConfig::default()
        };
        let (bd, g) = combined_loss(&logits, &labels, &cfg, 0, 10, None).unwrap();
        let (ce, gce) = softmax_ce(&logits, &labels).unwrap();
        assert_eq!(bd.total, ce);
        assert_eq!(g, gce);

        let flat = Tensor::full(&[2, 3], 1e-3);
        let cfg = OdConfig {
            beta: 1.0,
            ..OdConfig::default()
        };
        let (bd, _) = combined_loss(&flat, &labels, &cfg, 0, 10, None).unwrap();
        assert_eq!(bd.od, 0.0);
        assert_eq!(bd.total, bd.ce);
    }

    #[test]
    fn combined_uses_dynamic_level() {
        let logits = t(&[&[1.0, 2.0]]);
        let cfg = OdConfig {
            beta: 1.0,
            dynamic: true,
            c: 0.0,
            ..OdConfig::default()
        };
        let (bd, _) = combined_loss(&logits, &[0], &cfg, 0, 4, None).unwrap();
        assert_eq!(bd.effective_c, 0.0);
        let (bd, _) = combined_loss(&logits, &[0], &cfg, 1, 4, Some(1.5)).unwrap();
        assert_eq!(bd.effective_c, 1.5);
        assert_eq!(bd.od, 0.5 * 0.5 / 2.0);
    }

    #[test]
    fn schedules() {
        use BetaSchedule::*;
        assert_eq!(beta_schedule(Warmup, 1.0, 0, 300, 75).unwrap(), 0.0);
        assert_eq!(beta_schedule(Warmup, 1.0, 75, 300, 75).unwrap(), 1.0);
        assert_eq!(beta_schedule(Warmup, 2.5, 299, 300, 75).unwrap(), 0.0);
        assert_eq!(beta_schedule(LinearDown, 1.0, 299, 300, 75).unwrap(), 0.0);
        assert_eq!(beta_schedule(LinearDown, 1.0, 0, 300, 75).unwrap(), 1.0);
        assert_relative_eq!(
            beta_schedule(LinearUp, 1.0, 150, 300, 75).unwrap(),
            0.501_672_240_802_675_6,
            max_relative = 1e-12
        );
        assert_eq!(beta_schedule(Constant, 0.7, 0, 1, 75).unwrap(), 0.7);
        assert!(beta_schedule(LinearUp, 1.0, 0, 1, 75).is_err());
        assert!(beta_schedule(Constant, 1.0, 5, 5, 75).is_err());
    }

    #[test]
    fn dynamic_level_needs_completed_epoch() {
        let mut d = DynamicDecayLevel::new();
        assert!(d.level().is_err());
        assert_eq!(d.level_or(0.25), 0.25);
        d.observe(&t(&[&[0.0, 2.0]]));
        assert!(d.level().is_err());
        d.end_epoch();
        assert_eq!(d.level().unwrap(), 1.0);
        d.observe(&Tensor::full(&[3, 4], -0.5));
        d.end_epoch();
        assert_eq!(d.level().unwrap(), -0.5);
    }

    #[test]
    fn config_validation() {
        assert!(OdConfig::default().validate().is_ok());
        let bad = OdConfig {
            beta: -1.0,
            ..OdConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
