//! Layer kinds and their single-sample kernels.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    Maxpool2x2,
    Flatten,
    /// Dense layer with two outputs whose activations are exported for 2-D plots.
    Bottleneck2d { input: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { input, output } => write!(f, "dense({input},{output})"),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => write!(f, "conv3x3({in_channels},{out_channels})"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Maxpool2x2 => write!(f, "maxpool2x2"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Bottleneck2d { input } => write!(f, "bottleneck2d({input})"),
        }
    }
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape, or the reason it
    /// cannot accept that input.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense {
                input: n_in,
                output,
            } => {
                if output == 0 {
                    return Err("dense layer needs at least one output".into());
                }
                match input {
                    [n] if *n == n_in => Ok(vec![output]),
                    _ => Err(format!("expects input [{n_in}], receives {input:?}")),
                }
            }
            LayerSpec::Bottleneck2d { input: n_in } => match input {
                [n] if *n == n_in => Ok(vec![2]),
                _ => Err(format!("expects input [{n_in}], receives {input:?}")),
            },
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => {
                if out_channels == 0 {
                    return Err("conv layer needs at least one output channel".into());
                }
                match input {
                    [c, h, w] if *c == in_channels => Ok(vec![out_channels, *h, *w]),
                    _ => Err(format!(
                        "expects input [{in_channels}, H, W], receives {input:?}"
                    )),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxpool2x2 => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                _ => Err(format!("expects input [C, H>=2, W>=2], receives {input:?}")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of (weight, bias) for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Dense { input, output } => Some((vec![output, input], output)),
            LayerSpec::Bottleneck2d { input } => Some((vec![2, input], 2)),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => Some((vec![out_channels, in_channels, 3, 3], out_channels)),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        self.param_shapes().map(|(w, _)| w[1..].iter().product())
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. })
    }
}

pub(crate) fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Accumulates into `gw`, `gb` and overwrites `gx`.
pub(crate) fn dense_backward(
    w: &[f64],
    x: &[f64],
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    gx: &mut [f64],
) {
    let n_in = x.len();
    gx.iter_mut().for_each(|v| *v = 0.0);
    for (o, &go) in g.iter().enumerate() {
        gb[o] += go;
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += go * x[i];
            gx[i] += row[i] * go;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    in_ch: usize,
    h: usize,
    wd: usize,
    out: &mut [f64],
) {
    let out_ch = b.len();
    let plane = h * wd;
    for o in 0..out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..in_ch {
            let src = &x[c * plane..(c + 1) * plane];
            let k = &w[(o * in_ch + c) * 9..(o * in_ch + c + 1) * 9];
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for kx in 0..3 {
                            let sx = xx + kx;
                            if sx == 0 || sx > wd {
                                continue;
                            }
                            acc += k[ky * 3 + kx] * src[sy * wd + sx - 1];
                        }
                    }
                    dst[y * wd + xx] += acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    w: &[f64],
    x: &[f64],
    g: &[f64],
    in_ch: usize,
    h: usize,
    wd: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    gx: &mut [f64],
) {
    let out_ch = gb.len();
    let plane = h * wd;
    gx.iter_mut().for_each(|v| *v = 0.0);
    for o in 0..out_ch {
        let gplane = &g[o * plane..(o + 1) * plane];
        gb[o] += gplane.iter().sum::<f64>();
        for c in 0..in_ch {
            let base = (o * in_ch + c) * 9;
            let src = &x[c * plane..(c + 1) * plane];
            for y in 0..h {
                for xx in 0..wd {
                    let go = gplane[y * wd + xx];
                    if go == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for kx in 0..3 {
                            let sx = xx + kx;
                            if sx == 0 || sx > wd {
                                continue;
                            }
                            let idx = sy * wd + sx - 1;
                            gw[base + ky * 3 + kx] += go * src[idx];
                            gx[c * plane + idx] += w[base + ky * 3 + kx] * go;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_forward(x: &[f64], out: &mut [f64]) {
    for (y, &v) in out.iter_mut().zip(x) {
        *y = if v > 0.0 { v } else { 0.0 };
    }
}

pub(crate) fn relu_backward(x: &[f64], g: &[f64], gx: &mut [f64]) {
    for ((d, &v), &go) in gx.iter_mut().zip(x).zip(g) {
        *d = if v > 0.0 { go } else { 0.0 };
    }
}

/// Index into `x` of the winning element of each pooling window; first
/// maximum in scan order wins ties.
fn pool_argmax(x: &[f64], c: usize, h: usize, w: usize) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = ch * h * w + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = ch * h * w + (2 * y + dy) * w + 2 * xx + dx;
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(crate) fn maxpool_forward(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    for (y, i) in out.iter_mut().zip(pool_argmax(x, c, h, w)) {
        *y = x[i];
    }
}

pub(crate) fn maxpool_backward(x: &[f64], c: usize, h: usize, w: usize, g: &[f64], gx: &mut [f64]) {
    gx.iter_mut().for_each(|v| *v = 0.0);
    for (&go, i) in g.iter().zip(pool_argmax(x, c, h, w)) {
        gx[i] += go;
    }
}
