//! JSON experiment configuration.
//!
//! Unknown keys are rejected. Omitted training hyper-parameters take the
//! reference defaults: batch size 128, learning rate 0.1 decayed by 0.1 at
//! epochs 150 and 225, momentum 0.9 (not Nesterov), weight decay 1e-4 and
//! 300 epochs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, BlobSpec, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::regularizers::OdConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub od: OdConfig,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::initial_lr")]
    pub initial_lr: f64,
    #[serde(default = "defaults::milestones")]
    pub milestones: Vec<usize>,
    #[serde(default = "defaults::lr_factor")]
    pub lr_factor: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

mod defaults {
    use std::path::PathBuf;

    pub fn epochs() -> usize {
        300
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn initial_lr() -> f64 {
        0.1
    }
    pub fn milestones() -> Vec<usize> {
        vec![150, 225]
    }
    pub fn lr_factor() -> f64 {
        0.1
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/default")
    }
}

/// Explicit layer list, or the built-in desk network when `layers` is absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    /// Insert a two-unit layer before the classifier and export its features.
    #[serde(default)]
    pub bottleneck: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Keep only this many training samples per class.
    #[serde(default)]
    pub subsample_per_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic blobs; the test set is an independent draw from the same
    /// templates, by default one fifth the size of the training set.
    Blobs {
        n_classes: usize,
        n_per_class: usize,
        channels: usize,
        width: usize,
        height: usize,
        spread: f64,
        seed: u64,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("lr_factor must lie in (0,1], got {}", self.lr_factor));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "milestones must be strictly increasing: {:?}",
                self.milestones
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.dataset.subsample_per_class == Some(0) {
            return bad("subsample_per_class must be positive".into());
        }
        self.od.validate()?;
        if let Some(noise) = &self.noise {
            noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Training and test sets after subsampling and training-label noise.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, test) = match &self.dataset.source {
            DataSource::Blobs {
                n_classes,
                n_per_class,
                channels,
                width,
                height,
                spread,
                seed,
                test_per_class,
            } => {
                let spec = BlobSpec {
                    n_classes: *n_classes,
                    n_per_class: *n_per_class,
                    channels: *channels,
                    width: *width,
                    height: *height,
                    spread: *spread,
                    seed: *seed,
                };
                let test_n = test_per_class.unwrap_or((n_per_class / 5).max(1));
                data::gen_blobs_split(&spec, test_n)?
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = data::load_idx(train_images, train_labels)?;
                let test = data::load_idx(test_images, test_labels)?;
                let n = train.n_classes().max(test.n_classes());
                (
                    Dataset::new(train.images().clone(), train.labels().to_vec(), n)?,
                    Dataset::new(test.images().clone(), test.labels().to_vec(), n)?,
                )
            }
        };
        if let Some(n) = self.dataset.subsample_per_class {
            train = data::subsample_per_class(&train, n, self.seed)?;
        }
        if let Some(noise) = &self.noise {
            train = data::corrupt_labels(&train, noise)?.0;
        }
        Ok((train, test))
    }

    /// Layer list for inputs of `sample_shape` and `n_classes` outputs.
    pub fn resolve_layers(&self, sample_shape: &[usize], n_classes: usize) -> Result<Vec<LayerSpec>> {
        let mut layers = match &self.network.layers {
            Some(layers) => layers.clone(),
            None => desk_network(sample_shape, n_classes)?,
        };
        if self.network.bottleneck
            && !layers
                .iter()
                .any(|l| matches!(l, LayerSpec::Bottleneck2d { .. }))
        {
            match layers.pop() {
                Some(LayerSpec::Dense { input, output }) => {
                    layers.push(LayerSpec::Bottleneck2d { input });
                    layers.push(LayerSpec::Dense { input: 2, output });
                }
                other => {
                    return Err(Error::Config(format!(
                        "bottleneck needs a dense classifier as last layer, found {other:?}"
                    )))
                }
            }
        }
        Ok(layers)
    }
}

/// conv3x3(C,8) relu maxpool conv3x3(8,16) relu flatten dense(.,64) relu dense(64,N)
pub fn desk_network(sample_shape: &[usize], n_classes: usize) -> Result<Vec<LayerSpec>> {
    let &[c, h, w] = sample_shape else {
        return Err(Error::Config(format!(
            "desk network needs [C, H, W] inputs, got {sample_shape:?}"
        )));
    };
    if h < 2 || w < 2 {
        return Err(Error::Config(format!("inputs of {h}x{w} are too small to pool")));
    }
    Ok(vec![
        LayerSpec::Conv3x3 {
            in_channels: c,
            out_channels: 8,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool2x2,
        LayerSpec::Conv3x3 {
            in_channels: 8,
            out_channels: 16,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            input: 16 * (h / 2) * (w / 2),
            output: 64,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            input: 64,
            output: n_classes,
        },
    ])
}
