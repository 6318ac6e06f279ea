use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::layers::{output_shape, Activation, LayerSpec, Shape};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// A layer with its resolved shapes and parameters.
///
/// Conv weights are laid out `[filter][tap][in_channel]`, dense weights
/// `[unit][input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    window: usize,
    channels: usize,
    layers: Vec<Layer>,
    adam: AdamState,
}

/// One gradient tensor per parameter tensor, ordered like
/// [`CnnModel::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self {
            tensors: model.parameters().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&x| x == 0.0)
    }
}

/// Activations recorded by a forward pass, consumed by backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `values[0]` is the input window; `values[i + 1]` is layer `i`'s output.
    values: Vec<Vec<f64>>,
    /// Pre-activations for conv/dense layers (empty otherwise).
    pre: Vec<Vec<f64>>,
    /// Max-pool argmax (flat input index per output element).
    argmax: Vec<Vec<usize>>,
    /// Inverted-dropout multipliers for dense layers, when dropout was drawn.
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }

    /// Output of layer `i` (after activation and any dropout).
    pub fn layer_output(&self, i: usize) -> &[f64] {
        &self.values[i + 1]
    }
}

impl CnnModel {
    /// Builds and initializes a model for `w x channels` windows.
    ///
    /// Weights are Glorot-uniform in `±sqrt(6 / (fan_in + fan_out))`, with conv
    /// fans `kernel * in_channels` and `kernel * filters`; biases start at 0.
    pub fn build(w: usize, channels: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if w == 0 || channels == 0 {
            return Err(Error::Shape("window and channel count must be positive".into()));
        }
        if specs.is_empty() {
            return Err(Error::Shape("layer stack is empty".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let mut shape = Shape::Seq { len: w, channels };
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let out = output_shape(i, spec, shape)?;
            let (weights, bias) = match (*spec, shape) {
                (
                    LayerSpec::Conv1d {
                        filters,
                        kernel_size,
                        ..
                    },
                    Shape::Seq { channels: cin, .. },
                ) => {
                    let limit = (6.0 / ((kernel_size * cin + kernel_size * filters) as f64)).sqrt();
                    let w = (0..filters * kernel_size * cin)
                        .map(|_| rng.uniform(-limit, limit))
                        .collect();
                    (w, vec![0.0; filters])
                }
                (LayerSpec::Dense { units, .. }, Shape::Flat(n)) => {
                    let limit = (6.0 / ((n + units) as f64)).sqrt();
                    let w = (0..units * n).map(|_| rng.uniform(-limit, limit)).collect();
                    (w, vec![0.0; units])
                }
                _ => (Vec::new(), Vec::new()),
            };
            layers.push(Layer {
                spec: *spec,
                input: shape,
                output: out,
                weights,
                bias,
            });
            shape = out;
        }
        match specs.last() {
            Some(LayerSpec::Dense {
                units,
                activation: Activation::Sigmoid,
                ..
            }) if *units == channels => {}
            last => {
                return Err(Error::Shape(format!(
                    "final layer must be Dense({channels}, sigmoid), got {last:?}"
                )))
            }
        }
        let mut model = Self {
            window: w,
            channels,
            layers,
            adam: AdamState::zeros([]),
        };
        model.adam = AdamState::zeros(model.parameters().iter().map(|t| t.len()));
        Ok(model)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Size of the first flat shape in the stack (the Flatten output).
    pub fn flatten_size(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match (l.spec, l.output) {
            (LayerSpec::Flatten, Shape::Flat(n)) => Some(n),
            _ => None,
        })
    }

    /// Parameter tensors in order: for each conv/dense layer, weights then bias.
    pub fn parameters(&self) -> Vec<&Vec<f64>> {
        self.layers
            .iter()
            .filter(|l| l.spec.has_params())
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .filter(|l| l.spec.has_params())
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn snapshot(&self) -> Vec<Vec<f64>> {
        self.parameters().into_iter().cloned().collect()
    }

    pub(crate) fn restore(&mut self, snapshot: Vec<Vec<f64>>) {
        for (dst, src) in self.parameters_mut().into_iter().zip(snapshot) {
            *dst = src;
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        let expected = self.window * self.channels;
        if window.len() != expected {
            return Err(Error::Shape(format!(
                "window has {} values, model expects {} x {} = {expected}",
                window.len(),
                self.window,
                self.channels
            )));
        }
        Ok(())
    }

    /// Inference pass (dropout disabled).
    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(window, None)?.values.pop().unwrap_or_default())
    }

    /// Forward pass. Passing a generator enables training mode: each dense
    /// layer draws an inverted-dropout mask from it.
    pub fn forward(&self, window: &[f64], dropout: Option<&mut SplitMix64>) -> Result<Trace> {
        self.check_window(window)?;
        let n = self.layers.len();
        let mut trace = Trace {
            values: Vec::with_capacity(n + 1),
            pre: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        trace.values.push(window.to_vec());
        let mut rng = dropout;
        for layer in &self.layers {
            let input = trace.values.last().expect("input pushed");
            let mut pre = Vec::new();
            let mut argmax = Vec::new();
            let mut mask = None;
            let out = match layer.spec {
                LayerSpec::Conv1d {
                    kernel_size,
                    activation,
                    ..
                } => {
                    pre = conv_forward(layer, kernel_size, input);
                    pre.iter().map(|&z| activation.apply(z)).collect()
                }
                LayerSpec::MaxPool1d { pool } => {
                    let (out, idx) = pool_forward(layer, pool, input);
                    argmax = idx;
                    out
                }
                LayerSpec::Flatten => input.clone(),
                LayerSpec::Dense {
                    units,
                    activation,
                    dropout: rate,
                } => {
                    let fan_in = input.len();
                    pre = (0..units)
                        .map(|u| {
                            let row = &layer.weights[u * fan_in..(u + 1) * fan_in];
                            layer.bias[u] + dot(row, input)
                        })
                        .collect();
                    let mut out: Vec<f64> = pre.iter().map(|&z| activation.apply(z)).collect();
                    if let Some(rng) = rng.as_deref_mut() {
                        if rate > 0.0 {
                            let keep = 1.0 / (1.0 - rate);
                            let m: Vec<f64> = (0..units)
                                .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
                                .collect();
                            for (o, k) in out.iter_mut().zip(&m) {
                                *o *= k;
                            }
                            mask = Some(m);
                        }
                    }
                    out
                }
            };
            trace.pre.push(pre);
            trace.argmax.push(argmax);
            trace.masks.push(mask);
            trace.values.push(out);
        }
        if let Some(bad) = trace.output().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite network output {bad} (parameters blew up)"
            )));
        }
        Ok(trace)
    }

    /// Accumulates `d loss / d parameter` into `grads`, given the gradient of
    /// the loss with respect to the network output. Reuses the dropout masks
    /// recorded in `trace`.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64], grads: &mut Gradients) {
        let mut delta = output_grad.to_vec();
        let mut tensor = grads.tensors.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.values[i];
            let output = &trace.values[i + 1];
            delta = match layer.spec {
                LayerSpec::Conv1d {
                    kernel_size,
                    activation,
                    ..
                } => {
                    tensor -= 2;
                    let dz: Vec<f64> = delta
                        .iter()
                        .zip(&trace.pre[i])
                        .zip(output)
                        .map(|((d, &z), &a)| d * activation.derivative(z, a))
                        .collect();
                    let (dw, db) = split_pair(&mut grads.tensors, tensor);
                    conv_backward(layer, kernel_size, input, &dz, dw, db)
                }
                LayerSpec::MaxPool1d { .. } => {
                    let mut d_in = vec![0.0; input.len()];
                    for (d, &src) in delta.iter().zip(&trace.argmax[i]) {
                        d_in[src] += d;
                    }
                    d_in
                }
                LayerSpec::Flatten => delta,
                LayerSpec::Dense { activation, .. } => {
                    tensor -= 2;
                    let pre = &trace.pre[i];
                    let mask = trace.masks[i].as_deref();
                    let dz: Vec<f64> = (0..delta.len())
                        .map(|u| {
                            let k = mask.map_or(1.0, |m| m[u]);
                            if k == 0.0 {
                                return 0.0;
                            }
                            // Undo the dropout scaling to recover the activation.
                            let a = output[u] / k;
                            delta[u] * k * activation.derivative(pre[u], a)
                        })
                        .collect();
                    let fan_in = input.len();
                    let (dw, db) = split_pair(&mut grads.tensors, tensor);
                    let mut d_in = vec![0.0; fan_in];
                    for (u, &g) in dz.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        db[u] += g;
                        let row = &layer.weights[u * fan_in..(u + 1) * fan_in];
                        let drow = &mut dw[u * fan_in..(u + 1) * fan_in];
                        for k in 0..fan_in {
                            drow[k] += g * input[k];
                            d_in[k] += g * row[k];
                        }
                    }
                    d_in
                }
            };
        }
    }

    /// MAE loss of one sample and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        window: &[f64],
        target: &[f64],
        dropout: Option<&mut SplitMix64>,
    ) -> Result<(f64, Gradients)> {
        let trace = self.forward(window, dropout)?;
        let loss = mae_loss(trace.output(), target)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward(&trace, &mae_gradient(trace.output(), target), &mut grads);
        Ok((loss, grads))
    }

    /// Standard Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn adam_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        let mut adam = std::mem::replace(&mut self.adam, AdamState::zeros([]));
        let result = adam.update(&mut self.parameters_mut(), &grads.tensors, learning_rate);
        self.adam = adam;
        result
    }
}

fn split_pair(tensors: &mut [Vec<f64>], at: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = tensors[at..at + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn seq_dims(shape: Shape) -> (usize, usize) {
    match shape {
        Shape::Seq { len, channels } => (len, channels),
        Shape::Flat(n) => (n, 1),
    }
}

/// Left zero padding for an odd or even kernel; the remainder goes right.
fn left_pad(kernel: usize) -> usize {
    (kernel - 1) / 2
}

fn conv_forward(layer: &Layer, kernel: usize, input: &[f64]) -> Vec<f64> {
    let (len, cin) = seq_dims(layer.input);
    let (_, filters) = seq_dims(layer.output);
    let pad = left_pad(kernel);
    let mut out = Vec::with_capacity(len * filters);
    for t in 0..len {
        for f in 0..filters {
            let mut acc = layer.bias[f];
            for j in 0..kernel {
                let s = t + j;
                if s < pad || s - pad >= len {
                    continue;
                }
                let s = s - pad;
                let w = &layer.weights[(f * kernel + j) * cin..(f * kernel + j + 1) * cin];
                acc += dot(w, &input[s * cin..(s + 1) * cin]);
            }
            out.push(acc);
        }
    }
    out
}

fn conv_backward(
    layer: &Layer,
    kernel: usize,
    input: &[f64],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let (len, cin) = seq_dims(layer.input);
    let (_, filters) = seq_dims(layer.output);
    let pad = left_pad(kernel);
    let mut d_in = vec![0.0; input.len()];
    for t in 0..len {
        for f in 0..filters {
            let g = dz[t * filters + f];
            if g == 0.0 {
                continue;
            }
            db[f] += g;
            for j in 0..kernel {
                let s = t + j;
                if s < pad || s - pad >= len {
                    continue;
                }
                let s = s - pad;
                let base = (f * kernel + j) * cin;
                for c in 0..cin {
                    dw[base + c] += g * input[s * cin + c];
                    d_in[s * cin + c] += g * layer.weights[base + c];
                }
            }
        }
    }
    d_in
}

fn pool_forward(layer: &Layer, pool: usize, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (len, ch) = seq_dims(layer.input);
    let out_len = len / pool;
    let mut out = Vec::with_capacity(out_len * ch);
    let mut idx = Vec::with_capacity(out_len * ch);
    for t in 0..out_len {
        for c in 0..ch {
            let mut best = (t * pool) * ch + c;
            for i in 1..pool {
                let k = (t * pool + i) * ch + c;
                if input[k] > input[best] {
                    best = k;
                }
            }
            out.push(input[best]);
            idx.push(best);
        }
    }
    (out, idx)
}

/// Mean over channels of `|prediction - target|`.
pub fn mae_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} channels, target has {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = prediction.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / prediction.len() as f64)
}

/// Subgradient of [`mae_loss`] with respect to the prediction; 0 where the
/// prediction equals the target.
pub fn mae_gradient(prediction: &[f64], target: &[f64]) -> Vec<f64> {
    let n = prediction.len() as f64;
    prediction
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}
