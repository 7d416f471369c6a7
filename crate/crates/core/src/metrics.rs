//! Accuracy, output statistics, calibration, parameter histograms and
//! activation counts.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, Network};
use crate::tensor::Tensor;

fn check_labels(b: usize, n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != b {
        return Err(Error::shape("labels", &[b], &[labels.len()]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: n,
        });
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Top-1 accuracy as a fraction.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, n) = logits.dims2()?;
    check_labels(b, n, labels)?;
    let correct = logits
        .rows()?
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / b as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub mean_abs: f64,
    pub sum: f64,
    /// Population standard deviation of each row, averaged over rows.
    pub mean_per_sample_std: f64,
    /// Mean magnitude of the ground-truth logit.
    pub expected_mean_abs: f64,
    /// Mean magnitude of the remaining logits.
    pub unexpected_mean_abs: f64,
}

pub fn output_stats(logits: &Tensor, labels: &[usize]) -> Result<OutputStats> {
    let (b, n) = logits.dims2()?;
    check_labels(b, n, labels)?;
    if n < 2 {
        return Err(Error::Invalid(
            "per-sample spread needs at least two outputs".into(),
        ));
    }
    let nf = n as f64;
    let (mut sum, mut abs_sum, mut std_sum, mut expected, mut unexpected) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (row, &y) in logits.rows()?.zip(labels) {
        let row_sum: f64 = row.iter().sum();
        let row_abs: f64 = row.iter().map(|v| v.abs()).sum();
        let mean = row_sum / nf;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        sum += row_sum;
        abs_sum += row_abs;
        std_sum += var.sqrt();
        expected += row[y].abs();
        unexpected += (row_abs - row[y].abs()) / (nf - 1.0);
    }
    let bf = b as f64;
    Ok(OutputStats {
        mean_abs: abs_sum / (bf * nf),
        sum,
        mean_per_sample_std: std_sum / bf,
        expected_mean_abs: expected / bf,
        unexpected_mean_abs: unexpected / bf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Confidence histogram. Bin `b` covers `(b/n, (b+1)/n]`; bin 0 also takes 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub n_bins: usize,
    pub bins: Vec<Bin>,
}

impl ReliabilityBins {
    pub fn from_bins(bins: Vec<Bin>) -> Self {
        ReliabilityBins {
            n_bins: bins.len(),
            bins,
        }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

pub const DEFAULT_BINS: usize = 25;

pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let b = (confidence * n_bins as f64).ceil() as usize;
    b.saturating_sub(1).min(n_bins - 1)
}

/// Bins max-probability confidences of `probs` against `labels`.
pub fn reliability_bins(probs: &Tensor, labels: &[usize], n_bins: usize) -> Result<ReliabilityBins> {
    let (b, n) = probs.dims2()?;
    check_labels(b, n, labels)?;
    if n_bins == 0 {
        return Err(Error::Invalid("need at least one bin".into()));
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for (i, (row, &y)) in probs.rows()?.zip(labels).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid(format!(
                "row {i} is not a probability distribution"
            )));
        }
        let pred = argmax(row);
        let k = bin_index(row[pred], n_bins);
        counts[k] += 1;
        conf_sum[k] += row[pred];
        correct[k] += usize::from(pred == y);
    }
    let bins = (0..n_bins)
        .map(|k| match counts[k] {
            0 => Bin::default(),
            c => Bin {
                count: c,
                mean_confidence: conf_sum[k] / c as f64,
                accuracy: correct[k] as f64 / c as f64,
            },
        })
        .collect();
    Ok(ReliabilityBins { n_bins, bins })
}

/// Count-weighted mean of `|accuracy - confidence|` over bins.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    let total = bins.total();
    if total == 0 {
        return Err(Error::Invalid("calibration error of zero samples".into()));
    }
    let gap: f64 = bins
        .bins
        .iter()
        .map(|b| {
            let c = b.count as f64;
            (c * b.accuracy - c * b.mean_confidence).abs()
        })
        .sum();
    Ok(gap / total as f64)
}

/// Positions `(i, j)` of a `[C, H, W]` map counted by how many channels are
/// strictly positive there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<usize>,
}

impl CountMatrix {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.counts[i * self.width + j]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn activation_count(feature_map: &Tensor) -> Result<CountMatrix> {
    let (c, h, w) = match feature_map.shape() {
        &[c, h, w] => (c, h, w),
        s => {
            return Err(Error::Invalid(format!(
                "feature map must be [C, H, W], got {s:?}"
            )))
        }
    };
    let mut counts = vec![0usize; h * w];
    for plane in feature_map.data().chunks_exact(h * w) {
        for (m, &v) in counts.iter_mut().zip(plane) {
            *m += usize::from(v > 0.0);
        }
    }
    debug_assert_eq!(feature_map.len(), c * h * w);
    Ok(CountMatrix {
        height: h,
        width: w,
        counts,
    })
}

/// Equal-width histogram of a layer's weights and biases over
/// `[-range, range]`; out-of-range values land in the edge bins.
pub fn weight_histogram(net: &Network, layer_index: usize, n_bins: usize, range: f64) -> Result<Vec<usize>> {
    let layer = net
        .layers()
        .get(layer_index)
        .ok_or_else(|| Error::Invalid(format!("no layer {layer_index}")))?;
    let (Some(w), Some(b)) = (layer.weight(), layer.bias()) else {
        return Err(Error::Invalid(format!(
            "layer {layer_index} ({}) has no parameters",
            layer.spec
        )));
    };
    if n_bins == 0 || range.is_nan() || range <= 0.0 {
        return Err(Error::Invalid("histogram needs bins and a positive range".into()));
    }
    let width = 2.0 * range / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in w.data().iter().chain(b.data()) {
        let k = ((v + range) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(n_bins - 1) };
        counts[k] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

/// Bottleneck activations of every sample in `ds`.
pub fn export_bottleneck_features(net: &Network, ds: &Dataset) -> Result<Vec<FeaturePoint>> {
    let layer = net
        .bottleneck_index()
        .ok_or_else(|| Error::Invalid("network has no bottleneck2d layer".into()))?;
    let mut points = Vec::with_capacity(ds.len());
    let batch = 256;
    for start in (0..ds.len()).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(ds.len())).collect();
        let (x, labels) = ds.gather(&idx);
        let (_, trace) = forward(net, &x)?;
        for (s, &label) in labels.iter().enumerate() {
            let out = trace
                .layer_output(layer, s)
                .expect("bottleneck layer is in the trace");
            points.push(FeaturePoint {
                x: out.data()[0],
                y: out.data()[1],
                label,
            });
        }
    }
    Ok(points)
}
