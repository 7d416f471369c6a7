//! Datasets: synthetic blobs, IDX files, per-class subsampling and label noise.

mod blobs;
mod idx;
mod noise;

pub use blobs::{gen_blobs, gen_blobs_split, BlobSpec};
pub use idx::{load_idx, read_idx_labels, write_idx_images, write_idx_labels};
pub use noise::{corrupt_labels, corrupt_raw, transition_matrix, NoiseKind, NoiseSpec, TransitionMatrix};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled images of shape `[M, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Invalid(format!(
                "images must be [M, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        Ok(Dataset {
            images,
            labels,
            n_classes,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Dataset::new(self.images.clone(), labels, self.n_classes)
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (images, labels) = self.gather(indices);
        Dataset::new(images, labels, self.n_classes)
    }

    /// Images and labels at `indices` without revalidation.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let size: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * size);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * size..(i + 1) * size]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let images = Tensor::new(shape, data).expect("gathered shape is consistent");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Keeps exactly `n` samples of every class, drawn without replacement.
/// The result interleaves classes in label order.
pub fn subsample_per_class(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Invalid("samples per class must be positive".into()));
    }
    let mut by_class = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (class, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < n {
            return Err(Error::InsufficientSamples {
                class,
                available: idx.len(),
                requested: n,
            });
        }
        idx.shuffle(&mut rng);
        idx.truncate(n);
    }
    let order: Vec<usize> = (0..n)
        .flat_map(|k| by_class.iter().map(move |idx| idx[k]))
        .collect();
    ds.select(&order)
}
