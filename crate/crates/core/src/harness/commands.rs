//! The `train`, `sweep`, `corrupt` and `analyze` commands.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::train::{RunRecord, Trainer};
use crate::analysis::{self, RegressionFit, RunSummary, RunTable};
use crate::data::{self, NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics;

pub const RUNLOG: &str = "runlog.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MODEL: &str = "model.bin";
pub const FEATURES: &str = "features2d.csv";
pub const RELIABILITY: &str = "reliability.csv";
pub const ACTIVATIONS: &str = "activation_count.csv";
pub const WEIGHTS: &str = "weight_histograms.csv";
pub const FAILED: &str = "FAILED";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";

const HISTOGRAM_BINS: usize = 50;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Outcome of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub output_dir: PathBuf,
    pub records: Vec<RunRecord>,
}

/// Trains from a config file.
pub fn cmd_train(config_path: impl AsRef<Path>) -> Result<TrainOutcome> {
    train_config(ExperimentConfig::load(config_path)?, Exec::default())
}

/// Trains `cfg` and writes every artifact into `cfg.output_dir`. A failed
/// run leaves a `FAILED` marker holding the error message.
pub fn train_config(cfg: ExperimentConfig, exec: Exec) -> Result<TrainOutcome> {
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let marker = dir.join(FAILED);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = train_into(cfg, exec, &dir);
    if let Err(e) = &result {
        // Best effort: the original error is what the caller needs.
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn train_into(cfg: ExperimentConfig, exec: Exec, dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    trainer.set_exec(exec);
    write_text(&dir.join(RESOLVED_CONFIG), &trainer.resolved_config().to_json())?;

    let log_path = dir.join(RUNLOG);
    let mut log = csv::Writer::from_path(&log_path)?;
    let records = trainer.run(|r| {
        log.serialize(r)?;
        log.flush().map_err(|e| Error::io(&log_path, e))
    })?;

    let model_path = dir.join(MODEL);
    let file = fs::File::create(&model_path).map_err(|e| Error::io(&model_path, e))?;
    trainer
        .network()
        .write_params(BufWriter::new(file))
        .map_err(|e| Error::io(&model_path, e))?;

    write_plot_data(&trainer, dir)?;
    Ok(TrainOutcome {
        output_dir: dir.to_path_buf(),
        records,
    })
}

#[derive(Serialize)]
struct ReliabilityRow {
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
    mean_confidence: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct ActivationRow {
    i: usize,
    j: usize,
    count: usize,
}

#[derive(Serialize)]
struct HistogramRow {
    layer: usize,
    lower: f64,
    upper: f64,
    count: usize,
}

/// Final-state plot data: reliability diagram, 2-D bottleneck features,
/// activation counts of the first test sample and parameter histograms.
fn write_plot_data(trainer: &Trainer, dir: &Path) -> Result<()> {
    let net = trainer.network();
    let test = trainer.test_set();

    let eval = trainer.evaluate(test)?;
    let n = eval.bins.n_bins as f64;
    let rows: Vec<ReliabilityRow> = eval
        .bins
        .bins
        .iter()
        .enumerate()
        .map(|(b, bin)| ReliabilityRow {
            bin: b,
            lower: b as f64 / n,
            upper: (b + 1) as f64 / n,
            count: bin.count,
            mean_confidence: bin.mean_confidence,
            accuracy: bin.accuracy,
        })
        .collect();
    write_csv(&dir.join(RELIABILITY), &rows)?;

    if net.bottleneck_index().is_some() {
        let points = metrics::export_bottleneck_features(net, test)?;
        write_csv(&dir.join(FEATURES), &points)?;
    }

    if let Some(conv) = net.last_conv_index() {
        let (x, _) = test.gather(&[0]);
        let (_, trace) = crate::nn::forward(net, &x)?;
        let map = trace.layer_output(conv, 0).expect("conv layer is traced");
        let counts = metrics::activation_count(&map)?;
        let rows: Vec<ActivationRow> = (0..counts.height)
            .flat_map(|i| (0..counts.width).map(move |j| (i, j)))
            .map(|(i, j)| ActivationRow {
                i,
                j,
                count: counts.get(i, j),
            })
            .collect();
        write_csv(&dir.join(ACTIVATIONS), &rows)?;
    }

    let mut rows = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        let Some(w) = layer.weight() else { continue };
        let range = w
            .data()
            .iter()
            .chain(layer.bias().map(|b| b.data()).unwrap_or_default())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let counts = metrics::weight_histogram(net, l, HISTOGRAM_BINS, range)?;
        let width = 2.0 * range / HISTOGRAM_BINS as f64;
        rows.extend(counts.into_iter().enumerate().map(|(k, count)| HistogramRow {
            layer: l,
            lower: -range + k as f64 * width,
            upper: -range + (k + 1) as f64 * width,
            count,
        }));
    }
    write_csv(&dir.join(WEIGHTS), &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    C,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::C => "c",
            SweepParam::Beta => "beta",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" => Ok(SweepParam::C),
            "beta" => Ok(SweepParam::Beta),
            _ => Err(Error::Invalid(format!("unknown sweep parameter {s:?} (expected c or beta)"))),
        }
    }
}

/// One row of `sweep_summary.csv`; failed runs have `ok = 0` and NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub ok: u8,
    /// Best test top-1 error over the run, in percent.
    pub test_error: f64,
    pub final_ece: f64,
    pub final_mean_abs: f64,
}

pub fn cmd_sweep(config_path: impl AsRef<Path>, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    sweep_config(&ExperimentConfig::load(config_path)?, param, values, Exec::default())
}

/// Runs one training per value in `<output_dir>/<param>_<value>`; runs are
/// dispatched through `exec` and failures are recorded, not propagated.
pub fn sweep_config(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Invalid("sweep needs at least one value".into()));
    }
    create_dir(&base.output_dir)?;
    let configs: Vec<(f64, ExperimentConfig)> = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::C => cfg.od.c = v,
                SweepParam::Beta => cfg.od.beta = v,
            }
            cfg.output_dir = base.output_dir.join(format!("{}_{v}", param.name()));
            (v, cfg)
        })
        .collect();
    let rows = exec.map(configs, |(value, cfg)| match train_config(cfg, exec) {
        Ok(outcome) => {
            let last = outcome.records.last().expect("at least one epoch");
            SweepRow {
                value,
                ok: 1,
                test_error: outcome
                    .records
                    .iter()
                    .map(|r| r.test_error)
                    .fold(f64::INFINITY, f64::min),
                final_ece: last.test_ece,
                final_mean_abs: last.test_mean_abs,
            }
        }
        Err(e) => {
            eprintln!("sweep {}={value} failed: {e}", param.name());
            SweepRow {
                value,
                ok: 0,
                test_error: f64::NAN,
                final_ece: f64::NAN,
                final_mean_abs: f64::NAN,
            }
        }
    });
    write_csv(&base.output_dir.join(SWEEP_SUMMARY), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct CorruptArgs {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to one past the largest label.
    pub n_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CorruptionReport {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub n_classes: usize,
    pub n_labels: usize,
    pub n_flipped: usize,
    pub realized_flip_fraction: f64,
}

pub const CORRUPT_LABELS: &str = "labels.idx";
pub const CORRUPT_SIDECAR: &str = "noise.json";

/// Writes `<out>/labels.idx` with corrupted labels and `<out>/noise.json`.
pub fn cmd_corrupt(args: &CorruptArgs) -> Result<CorruptionReport> {
    let spec = NoiseSpec {
        kind: args.kind,
        rate: args.rate,
        seed: args.seed,
    };
    spec.validate()?;
    let labels = data::read_idx_labels(&args.input)?;
    if labels.is_empty() {
        return Err(Error::Invalid("label file is empty".into()));
    }
    let inferred = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let n_classes = args.n_classes.unwrap_or(inferred);
    if n_classes < inferred {
        return Err(Error::Invalid(format!(
            "{n_classes} classes but labels reach {}",
            inferred - 1
        )));
    }
    if n_classes > 256 {
        return Err(Error::Invalid("IDX labels hold at most 256 classes".into()));
    }
    let t = data::transition_matrix(spec.kind, n_classes, spec.rate)?;
    let clean: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let noisy = data::corrupt_raw(&clean, &t, spec.seed);
    let n_flipped = clean.iter().zip(&noisy).filter(|(a, b)| a != b).count();

    create_dir(&args.out_dir)?;
    let bytes: Vec<u8> = noisy.iter().map(|&l| l as u8).collect();
    data::write_idx_labels(args.out_dir.join(CORRUPT_LABELS), &bytes)?;
    let report = CorruptionReport {
        kind: spec.kind,
        rate: spec.rate,
        seed: spec.seed,
        n_classes,
        n_labels: clean.len(),
        n_flipped,
        realized_flip_fraction: n_flipped as f64 / clean.len() as f64,
    };
    write_text(
        &args.out_dir.join(CORRUPT_SIDECAR),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub runs: Vec<PathBuf>,
    pub summary: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub x: String,
    pub y: String,
    pub fit: RegressionFit,
}

/// Aggregates run logs and optionally regresses column `y` on column `x`
/// over the rows of every log. The report is written to `out` and returned.
pub fn cmd_analyze(paths: &[PathBuf], regress: Option<(&str, &str)>, out: &Path) -> Result<AnalysisReport> {
    if paths.is_empty() {
        return Err(Error::Invalid("no run logs given".into()));
    }
    let tables = paths
        .iter()
        .map(RunTable::read_csv)
        .collect::<Result<Vec<_>>>()?;
    let summary = analysis::aggregate_runs(&tables)?;
    let regression = match regress {
        Some((x, y)) => {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for t in &tables {
                xs.extend(t.column(x)?);
                ys.extend(t.column(y)?);
            }
            Some(RegressionReport {
                x: x.to_string(),
                y: y.to_string(),
                fit: analysis::linreg(&xs, &ys)?,
            })
        }
        None => None,
    };
    let report = AnalysisReport {
        runs: paths.to_vec(),
        summary,
        regression,
    };
    write_text(out, &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
