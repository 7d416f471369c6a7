//! Label corruption through a class transition matrix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Flip to any other class uniformly.
    Symmetric,
    /// Flip class `i` to `(i + 1) mod N`.
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Invalid(format!("noise rate must lie in [0,1], got {}", self.rate)));
        }
        Ok(())
    }
}

/// `rows[i][j] = Pr(noisy = j | clean = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn n_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// Noisy label for clean label `y` given two uniform variates: `u`
    /// decides whether to flip, `v` picks the destination among the
    /// off-diagonal entries.
    fn sample(&self, y: usize, u: f64, v: f64) -> usize {
        let row = &self.rows[y];
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, p)| p).sum();
        if u >= off {
            return y;
        }
        let target = v * off;
        let mut acc = 0.0;
        let mut last = y;
        for (j, &p) in row.iter().enumerate() {
            if j == y || p == 0.0 {
                continue;
            }
            acc += p;
            last = j;
            if target < acc {
                return j;
            }
        }
        last
    }
}

pub fn transition_matrix(kind: NoiseKind, n_classes: usize, rate: f64) -> Result<TransitionMatrix> {
    if n_classes < 2 {
        return Err(Error::Invalid("label noise needs at least two classes".into()));
    }
    let rows = (0..n_classes)
        .map(|i| {
            let mut row = vec![0.0; n_classes];
            match kind {
                NoiseKind::Symmetric => {
                    let off = rate / (n_classes - 1) as f64;
                    row.iter_mut().for_each(|p| *p = off);
                }
                NoiseKind::Pair => row[(i + 1) % n_classes] = rate,
            }
            row[i] = 1.0 - rate;
            row
        })
        .collect();
    Ok(TransitionMatrix { rows })
}

/// Resamples every label from its transition row. Label `i` uses its own
/// ChaCha stream keyed on `(seed, i)`, so its fate does not depend on the
/// rest of the dataset.
pub fn corrupt_labels(ds: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, Vec<bool>)> {
    spec.validate()?;
    let t = transition_matrix(spec.kind, ds.n_classes(), spec.rate)?;
    let labels = corrupt_raw(ds.labels(), &t, spec.seed);
    let mask = labels.iter().zip(ds.labels()).map(|(a, b)| a != b).collect();
    Ok((ds.with_labels(labels)?, mask))
}

/// Label-only corruption, shared with the IDX relabelling command.
pub fn corrupt_raw(labels: &[usize], t: &TransitionMatrix, seed: u64) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            t.sample(y, u, v)
        })
        .collect()
}
