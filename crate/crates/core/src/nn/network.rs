use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{self, LayerSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;

const MODEL_MAGIC: &[u8; 4] = b"ODLB";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    weight: Option<Tensor>,
    bias: Option<Tensor>,
}

impl Layer {
    pub fn weight(&self) -> Option<&Tensor> {
        self.weight.as_ref()
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }
}

/// An ordered stack of layers applied to each sample independently.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    seed: u64,
    exec: Exec,
}

/// Per-sample intermediates kept by [`forward`] for [`backward`].
///
/// `values[s][0]` is the input of sample `s` and `values[s][l + 1]` the
/// output of layer `l`.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    values: Vec<Vec<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl ActivationTrace {
    pub fn batch_size(&self) -> usize {
        self.values.len()
    }

    /// Output of layer `layer` for sample `sample`, with its per-sample shape.
    pub fn layer_output(&self, layer: usize, sample: usize) -> Option<Tensor> {
        let data = self.values.get(sample)?.get(layer + 1)?.clone();
        Tensor::new(self.shapes.get(layer + 1)?.clone(), data).ok()
    }
}

/// Gradients aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Tensor>,
}

impl ParamGrads {
    fn zeros_like(net: &Network) -> Self {
        ParamGrads {
            grads: net.params().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// Builds a network for per-sample inputs of shape `input_shape`.
///
/// Weights are uniform with standard deviation `1/sqrt(fan_in)`, biases are
/// zero. Parameters depend only on `(input_shape, specs, seed)`.
pub fn init_network(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Network> {
    if specs.is_empty() {
        return Err(Error::Invalid("network needs at least one layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = input_shape.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let output_shape = spec.output_shape(&shape).map_err(|reason| {
            let (index, first) = match i.checked_sub(1) {
                Some(p) => (p, specs[p].to_string()),
                None => (0, format!("input{input_shape:?}")),
            };
            Error::IncompatibleLayers {
                index,
                first,
                next_index: i,
                second: spec.to_string(),
                reason,
            }
        })?;
        let (weight, bias) = match spec.param_shapes() {
            Some((wshape, n_bias)) => {
                let fan_in = spec.fan_in().unwrap_or(1) as f64;
                let bound = (3.0 / fan_in).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound)
                    .map_err(|e| Error::Invalid(e.to_string()))?;
                let n: usize = wshape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
                (
                    Some(Tensor::new(wshape, data)?),
                    Some(Tensor::zeros(&[n_bias])),
                )
            }
            None => (None, None),
        };
        layers.push(Layer {
            spec: *spec,
            input_shape: shape.clone(),
            output_shape: output_shape.clone(),
            weight,
            bias,
        });
        shape = output_shape;
    }
    if shape.len() != 1 {
        return Err(Error::Invalid(format!(
            "final layer must produce a class vector, produces {shape:?}"
        )));
    }
    Ok(Network {
        layers,
        input_shape: input_shape.to_vec(),
        seed,
        exec: Exec::default(),
    })
}

impl Network {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_shape[0])
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// Parameter tensors in layer order, weight before bias.
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Index of the bottleneck layer, if any.
    pub fn bottleneck_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l.spec, LayerSpec::Bottleneck2d { .. }))
    }

    /// Index of the last convolution layer, if any.
    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.spec.is_conv())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(1)];
            expected.extend(&self.input_shape);
            return Err(Error::shape("network input", &expected, shape));
        }
        Ok(shape[0])
    }

    fn sample_input<'a>(&self, x: &'a Tensor, s: usize) -> &'a [f64] {
        let size: usize = self.input_shape.iter().product();
        &x.data()[s * size..(s + 1) * size]
    }

    fn forward_sample(&self, input: &[f64], keep: bool) -> Result<Vec<Vec<f64>>> {
        let mut values = vec![input.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let x = values.last().expect("trace is never empty");
            let mut out = vec![0.0; layer.output_shape.iter().product()];
            match layer.spec {
                LayerSpec::Dense { .. } | LayerSpec::Bottleneck2d { .. } => {
                    let (w, b) = layer_params(layer);
                    layer::dense_forward(w, b, x, &mut out);
                }
                LayerSpec::Conv3x3 { in_channels, .. } => {
                    let (w, b) = layer_params(layer);
                    let (h, wd) = (layer.input_shape[1], layer.input_shape[2]);
                    layer::conv_forward(w, b, x, in_channels, h, wd, &mut out);
                }
                LayerSpec::Relu => layer::relu_forward(x, &mut out),
                LayerSpec::Maxpool2x2 => {
                    let s = &layer.input_shape;
                    layer::maxpool_forward(x, s[0], s[1], s[2], &mut out);
                }
                LayerSpec::Flatten => out.copy_from_slice(x),
            }
            if !out.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} ({})", layer.spec)));
            }
            if !keep {
                values.clear();
            }
            values.push(out);
        }
        Ok(values)
    }

    fn backward_sample(&self, values: &[Vec<f64>], grad_out: &[f64], acc: &mut ParamGrads) {
        let mut p = self
            .layers
            .iter()
            .filter(|l| l.weight.is_some())
            .count()
            * 2;
        let mut g = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &values[l];
            let mut gx = vec![0.0; x.len()];
            match layer.spec {
                LayerSpec::Dense { .. } | LayerSpec::Bottleneck2d { .. } => {
                    p -= 2;
                    let (w, _) = layer_params(layer);
                    let (gw, gb) = split_pair(&mut acc.grads, p);
                    layer::dense_backward(w, x, &g, gw, gb, &mut gx);
                }
                LayerSpec::Conv3x3 { in_channels, .. } => {
                    p -= 2;
                    let (w, _) = layer_params(layer);
                    let (h, wd) = (layer.input_shape[1], layer.input_shape[2]);
                    let (gw, gb) = split_pair(&mut acc.grads, p);
                    layer::conv_backward(w, x, &g, in_channels, h, wd, gw, gb, &mut gx);
                }
                LayerSpec::Relu => layer::relu_backward(x, &g, &mut gx),
                LayerSpec::Maxpool2x2 => {
                    let s = &layer.input_shape;
                    layer::maxpool_backward(x, s[0], s[1], s[2], &g, &mut gx);
                }
                LayerSpec::Flatten => gx.copy_from_slice(&g),
            }
            g = gx;
        }
    }

    fn batch_tensor(&self, rows: Vec<Vec<f64>>) -> Result<Tensor> {
        let b = rows.len();
        Tensor::new(vec![b, self.n_classes()], rows.concat())
    }

    /// Logits only, without retaining intermediates.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.check_input(x)?;
        let chunks = self.exec.map_chunks(b, |range| {
            range
                .map(|s| {
                    self.forward_sample(self.sample_input(x, s), false)
                        .map(|mut v| v.pop().expect("final output"))
                })
                .collect::<Result<Vec<_>>>()
        });
        let rows = chunks.into_iter().collect::<Result<Vec<_>>>()?.concat();
        self.batch_tensor(rows)
    }

    /// Writes the parameters as a length-prefixed little-endian dump:
    /// magic `ODLB`, `u32` version, `u32` tensor count, then per tensor a
    /// `u32` rank, `rank` `u32` extents and the `f64` values.
    pub fn write_params<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_VERSION)?;
        w.write_u32::<LittleEndian>(self.params().count() as u32)?;
        for t in self.params() {
            w.write_u32::<LittleEndian>(t.rank() as u32)?;
            for &d in t.shape() {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in t.data() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    /// Loads a dump written by [`Network::write_params`]; shapes must match.
    pub fn read_params<R: Read>(&mut self, mut r: R) -> Result<()> {
        let bad = |detail: &str| Error::Invalid(format!("model dump: {detail}"));
        let io = |e: std::io::Error| bad(&e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        if r.read_u32::<LittleEndian>().map_err(io)? != MODEL_VERSION {
            return Err(bad("unsupported version"));
        }
        let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        if count != self.params().count() {
            return Err(bad("tensor count differs from network"));
        }
        for t in self.params_mut() {
            let rank = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            if shape != t.shape() {
                return Err(Error::shape("model dump tensor", t.shape(), &shape));
            }
            for v in t.data_mut() {
                *v = r.read_f64::<LittleEndian>().map_err(io)?;
            }
        }
        Ok(())
    }
}

fn layer_params(layer: &Layer) -> (&[f64], &[f64]) {
    (
        layer.weight.as_ref().expect("parameterized layer").data(),
        layer.bias.as_ref().expect("parameterized layer").data(),
    )
}

fn split_pair(grads: &mut [Tensor], p: usize) -> (&mut [f64], &mut [f64]) {
    let (w, b) = grads[p..p + 2].split_at_mut(1);
    (w[0].data_mut(), b[0].data_mut())
}

/// Runs a batch `x` of shape `[B, ..input_shape]` through the network.
pub fn forward(net: &Network, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
    let b = net.check_input(x)?;
    let chunks = net.exec.map_chunks(b, |range| {
        range
            .map(|s| net.forward_sample(net.sample_input(x, s), true))
            .collect::<Result<Vec<_>>>()
    });
    let values = chunks.into_iter().collect::<Result<Vec<_>>>()?.concat();
    let rows = values
        .iter()
        .map(|v| v.last().expect("final output").clone())
        .collect();
    let logits = net.batch_tensor(rows)?;
    let mut shapes = vec![net.input_shape.clone()];
    shapes.extend(net.layers.iter().map(|l| l.output_shape.clone()));
    Ok((logits, ActivationTrace { values, shapes }))
}

/// Gradients of the parameters given the gradient of the loss with respect
/// to the logits of the traced forward pass.
pub fn backward(net: &Network, trace: &ActivationTrace, grad_logits: &Tensor) -> Result<ParamGrads> {
    let b = trace.batch_size();
    if trace.values.iter().any(|v| v.len() != net.layers.len() + 1)
        || trace.shapes.first().map(Vec::as_slice) != Some(net.input_shape.as_slice())
    {
        return Err(Error::Invalid(
            "activation trace was not produced by this network".into(),
        ));
    }
    if grad_logits.shape() != [b, net.n_classes()] {
        return Err(Error::shape(
            "grad_logits",
            &[b, net.n_classes()],
            grad_logits.shape(),
        ));
    }
    let n = net.n_classes();
    let chunks = net.exec.map_chunks(b, |range| {
        let mut acc = ParamGrads::zeros_like(net);
        for s in range {
            let g = &grad_logits.data()[s * n..(s + 1) * n];
            net.backward_sample(&trace.values[s], g, &mut acc);
        }
        acc
    });
    let mut total = ParamGrads::zeros_like(net);
    for chunk in &chunks {
        total.add_assign(chunk);
    }
    for (i, g) in total.grads.iter().enumerate() {
        g.check_finite(&format!("gradient of parameter {i}"))?;
    }
    Ok(total)
}
