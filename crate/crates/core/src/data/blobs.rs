use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class templates drawn uniformly from `[0,1]`, samples perturbed by
/// Gaussian noise of standard deviation `spread`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub spread: f64,
    pub seed: u64,
}

const TEMPLATE_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes == 0
            || self.n_per_class == 0
            || self.channels == 0
            || self.width == 0
            || self.height == 0
        {
            return Err(Error::Invalid(format!("blob counts must be positive: {self:?}")));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::Invalid(format!("spread must be non-negative, got {}", self.spread)));
        }
        Ok(())
    }

    fn templates(&self) -> Vec<Vec<f64>> {
        let size = self.channels * self.height * self.width;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(TEMPLATE_STREAM);
        (0..self.n_classes)
            .map(|_| (0..size).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    fn draw(&self, templates: &[Vec<f64>], n_per_class: usize, stream: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let noise = Normal::new(0.0, self.spread).map_err(|e| Error::Invalid(e.to_string()))?;
        let m = n_per_class * self.n_classes;
        let mut data = Vec::with_capacity(m * templates[0].len());
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let class = i % self.n_classes;
            labels.push(class);
            for &v in &templates[class] {
                let eps = if self.spread > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                data.push(v + eps);
            }
        }
        let images = Tensor::new(vec![m, self.channels, self.height, self.width], data)?;
        Dataset::new(images, labels, self.n_classes)
    }
}

/// One dataset of `n_per_class` samples per class, classes interleaved.
pub fn gen_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    spec.draw(&spec.templates(), spec.n_per_class, TRAIN_STREAM)
}

/// Train set as [`gen_blobs`] plus an independent test draw from the same
/// class templates.
pub fn gen_blobs_split(spec: &BlobSpec, test_per_class: usize) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if test_per_class == 0 {
        return Err(Error::Invalid("test set needs samples".into()));
    }
    let templates = spec.templates();
    Ok((
        spec.draw(&templates, spec.n_per_class, TRAIN_STREAM)?,
        spec.draw(&templates, test_per_class, TEST_STREAM)?,
    ))
}
