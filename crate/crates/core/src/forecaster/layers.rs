use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    /// Zero "same" padding, stride 1.
    Conv1d {
        filters: usize,
        kernel_size: usize,
        activation: Activation,
    },
    /// Stride equal to the pool size, no padding.
    MaxPool1d { pool: usize },
    Flatten,
    /// Dropout is applied to the activated output during training only.
    Dense {
        units: usize,
        activation: Activation,
        dropout: f64,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel_size: usize) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel_size,
            activation: Activation::Relu,
        }
    }

    pub fn pool(pool: usize) -> Self {
        LayerSpec::MaxPool1d { pool }
    }

    pub fn dense(units: usize, activation: Activation, dropout: f64) -> Self {
        LayerSpec::Dense {
            units,
            activation,
            dropout,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                ..
            } if filters == 0 || kernel_size == 0 => Err(Error::Shape(
                "conv filters and kernel size must be positive".into(),
            )),
            LayerSpec::MaxPool1d { pool: 0 } => Err(Error::Shape("pool size must be positive".into())),
            LayerSpec::Dense { units: 0, .. } => Err(Error::Shape("dense units must be positive".into())),
            LayerSpec::Dense { dropout, .. } if !(0.0..1.0).contains(&dropout) => Err(Error::Shape(
                format!("dropout rate {dropout} outside [0, 1)"),
            )),
            _ => Ok(()),
        }
    }
}

/// Architecture knobs of the base conv stack; the output layer always has
/// one sigmoid unit per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub dense_units: [usize; 2],
    pub dropout: f64,
}

impl Default for ConvStackSpec {
    fn default() -> Self {
        Self {
            conv_filters: [32, 64],
            kernel_size: 3,
            dense_units: [64, 32],
            dropout: 0.2,
        }
    }
}

impl ConvStackSpec {
    /// Conv-pool-conv-pool-flatten-dense-dense-output.
    pub fn layers(&self, channels: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(self.conv_filters[0], self.kernel_size),
            LayerSpec::pool(2),
            LayerSpec::conv(self.conv_filters[1], self.kernel_size),
            LayerSpec::pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(self.dense_units[0], Activation::Tanh, self.dropout),
            LayerSpec::dense(self.dense_units[1], Activation::Tanh, self.dropout),
            LayerSpec::dense(channels, Activation::Sigmoid, self.dropout),
        ]
    }
}

/// The base architecture with default sizes.
pub fn base_stack(channels: usize) -> Vec<LayerSpec> {
    ConvStackSpec::default().layers(channels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    /// `len` timesteps by `channels` features, stored time-major.
    Seq { len: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Seq { len, channels } => len * channels,
            Shape::Flat(n) => n,
        }
    }
}

/// Output shape of `spec` applied to `input`; `index` is used in diagnostics.
pub(crate) fn output_shape(index: usize, spec: &LayerSpec, input: Shape) -> Result<Shape> {
    spec.validate()
        .map_err(|e| Error::Shape(format!("layer {index}: {e}")))?;
    match (*spec, input) {
        (LayerSpec::Conv1d { filters, .. }, Shape::Seq { len, .. }) => Ok(Shape::Seq {
            len,
            channels: filters,
        }),
        (LayerSpec::MaxPool1d { pool }, Shape::Seq { len, channels }) => {
            if len % pool != 0 {
                Err(Error::Shape(format!(
                    "layer {index} (MaxPool1D {pool}): input length {len} is not divisible by {pool}"
                )))
            } else {
                Ok(Shape::Seq {
                    len: len / pool,
                    channels,
                })
            }
        }
        (LayerSpec::Flatten, Shape::Seq { len, channels }) => Ok(Shape::Flat(len * channels)),
        (LayerSpec::Dense { units, .. }, Shape::Flat(_)) => Ok(Shape::Flat(units)),
        (spec, input) => Err(Error::Shape(format!(
            "layer {index} ({spec:?}) cannot take input of shape {input:?}"
        ))),
    }
}
