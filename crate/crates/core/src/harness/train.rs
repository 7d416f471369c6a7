use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{self, OutputStats, ReliabilityBins};
use crate::nn::{self, Network, OptState};
use crate::regularizers::{self, DynamicDecayLevel};
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 7;
const EVAL_BATCH: usize = 256;

/// One row of `runlog.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub lr: f64,
    pub effective_beta: f64,
    pub effective_c: f64,
    pub train_ce: f64,
    /// Unweighted output-decay term.
    pub train_od: f64,
    pub train_total: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Top-1 error in percent.
    pub test_error: f64,
    pub test_mean_abs: f64,
    pub test_sum: f64,
    pub test_mean_per_sample_std: f64,
    pub test_expected_mean_abs: f64,
    pub test_unexpected_mean_abs: f64,
    pub test_ece: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub stats: OutputStats,
    pub bins: ReliabilityBins,
    pub ece: f64,
}

/// A single training run: data, network and optimizer state.
pub struct Trainer {
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    net: Network,
    opt: OptState,
    decay_level: DynamicDecayLevel,
    shuffle_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = cfg.load_data()?;
        if train.sample_shape() != test.sample_shape() {
            return Err(Error::Config(format!(
                "train samples {:?} and test samples {:?} differ in shape",
                train.sample_shape(),
                test.sample_shape()
            )));
        }
        let layers = cfg.resolve_layers(train.sample_shape(), train.n_classes())?;
        let net = nn::init_network(train.sample_shape(), &layers, cfg.seed)?;
        if net.n_classes() != train.n_classes() {
            return Err(Error::Config(format!(
                "network has {} outputs for {} classes",
                net.n_classes(),
                train.n_classes()
            )));
        }
        let opt = OptState::new(&net, cfg.initial_lr, cfg.momentum, cfg.weight_decay)?;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        Ok(Trainer {
            cfg,
            train,
            test,
            net,
            opt,
            decay_level: DynamicDecayLevel::new(),
            shuffle_rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Config with the network written out explicitly.
    pub fn resolved_config(&self) -> ExperimentConfig {
        let mut cfg = self.cfg.clone();
        cfg.network.layers = Some(self.net.specs());
        cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.net.set_exec(exec);
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Logits of `ds` under the current parameters.
    pub fn logits(&self, ds: &Dataset) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(ds.len() * self.net.n_classes());
        for start in (0..ds.len()).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(ds.len())).collect();
            let (x, _) = ds.gather(&idx);
            rows.extend(self.net.predict(&x)?.into_data());
        }
        Tensor::new(vec![ds.len(), self.net.n_classes()], rows)
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<Evaluation> {
        let logits = self.logits(ds)?;
        let probs = regularizers::softmax(&logits)?;
        let bins = metrics::reliability_bins(&probs, ds.labels(), metrics::DEFAULT_BINS)?;
        Ok(Evaluation {
            accuracy: metrics::accuracy(&logits, ds.labels())?,
            stats: metrics::output_stats(&logits, ds.labels())?,
            ece: metrics::ece(&bins)?,
            bins,
        })
    }

    /// Runs one epoch of mini-batch SGD and evaluates on the test set.
    pub fn train_epoch(&mut self) -> Result<RunRecord> {
        let epoch = self.epoch;
        if epoch >= self.cfg.epochs {
            return Err(Error::Invalid(format!("all {} epochs already run", self.cfg.epochs)));
        }
        let lr = nn::step_lr(self.cfg.initial_lr, epoch, &self.cfg.milestones, self.cfg.lr_factor);
        self.opt.lr = lr;
        let dynamic_c = self.decay_level.level().ok();

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);

        let (mut ce, mut od, mut total, mut correct) = (0.0, 0.0, 0.0, 0usize);
        let (mut beta, mut c) = (0.0, self.cfg.od.c);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let at = |e: Error| Error::NonFinite(format!("epoch {epoch} batch {b}: {e}"));
            let (x, labels) = self.train.gather(idx);
            let (logits, trace) = nn::forward(&self.net, &x).map_err(at)?;
            let (loss, grad) = regularizers::combined_loss(
                &logits,
                &labels,
                &self.cfg.od,
                epoch,
                self.cfg.epochs,
                dynamic_c,
            )?;
            if !loss.total.is_finite() {
                return Err(at(Error::NonFinite("loss".into())));
            }
            let grads = nn::backward(&self.net, &trace, &grad).map_err(at)?;
            nn::sgd_step(&mut self.net, &grads, &mut self.opt)?;

            let w = idx.len() as f64;
            ce += loss.ce * w;
            od += loss.od * w;
            total += loss.total * w;
            correct += logits
                .rows()?
                .zip(&labels)
                .filter(|(row, &y)| metrics::argmax(row) == y)
                .count();
            beta = loss.effective_beta;
            c = loss.effective_c;
            self.decay_level.observe(&logits);
        }
        self.decay_level.end_epoch();
        self.epoch += 1;

        let n = self.train.len() as f64;
        let eval = self.evaluate(&self.test)?;
        Ok(RunRecord {
            epoch,
            lr,
            effective_beta: beta,
            effective_c: c,
            train_ce: ce / n,
            train_od: od / n,
            train_total: total / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: eval.accuracy,
            test_error: 100.0 * (1.0 - eval.accuracy),
            test_mean_abs: eval.stats.mean_abs,
            test_sum: eval.stats.sum,
            test_mean_per_sample_std: eval.stats.mean_per_sample_std,
            test_expected_mean_abs: eval.stats.expected_mean_abs,
            test_unexpected_mean_abs: eval.stats.unexpected_mean_abs,
            test_ece: eval.ece,
        })
    }

    /// Trains for the remaining epochs, handing each record to `on_record`.
    pub fn run(&mut self, mut on_record: impl FnMut(&RunRecord) -> Result<()>) -> Result<Vec<RunRecord>> {
        let mut records = Vec::with_capacity(self.cfg.epochs);
        while self.epoch < self.cfg.epochs {
            let record = self.train_epoch()?;
            on_record(&record)?;
            records.push(record);
        }
        Ok(records)
    }
}
