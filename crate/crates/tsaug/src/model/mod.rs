//! Small neural backbones with hand-derived backpropagation.
//!
//! Two architectures are provided as the evaluation substrate for
//! augmentation experiments:
//!
//! * MLP — `T*C -> 500 -> 256 -> classes`, each hidden layer followed by
//!   batch norm, ReLU, and dropout.
//! * Conv-1D — four conv blocks (32/64/128/256 channels, kernel 5) with
//!   batch norm, ReLU and max pooling, then global average pooling and a
//!   linear head.
//!
//! Both expose their parameters as one flat `f64` vector (the order is fixed
//! by the architecture), compute gradients with hand-written backward passes
//! that are finite-difference checked in the test suite, and serialize to a
//! small binary checkpoint format.

mod adam;
mod batchnorm;
mod checkpoint;
mod conv1d;
mod mlp;
mod train;

pub use adam::Adam;
pub use conv1d::{ConvArch, ConvModel};
pub use mlp::{MlpArch, MlpModel};
pub use train::{
    evaluate, evaluate_loss, softmax_cross_entropy, stack_batch, train, Augmenter, Batch,
    EpochRecord, TrainConfig, TrainReport,
};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Helpers to append array contents to a flat vector in row-major order.
pub(crate) mod flatten {
    use ndarray::{Array1, Array2, Array3};

    pub fn push1(out: &mut Vec<f64>, a: &Array1<f64>) {
        out.extend(a.iter());
    }
    pub fn push2(out: &mut Vec<f64>, a: &Array2<f64>) {
        out.extend(a.iter());
    }
    pub fn push3(out: &mut Vec<f64>, a: &Array3<f64>) {
        out.extend(a.iter());
    }
}

/// Helpers to read array contents back from a flat vector.
pub(crate) mod unflatten {
    use ndarray::{Array1, Array2, Array3};

    pub fn take1(flat: &[f64], off: &mut usize, a: &mut Array1<f64>) {
        for v in a.iter_mut() {
            *v = flat[*off];
            *off += 1;
        }
    }
    pub fn take2(flat: &[f64], off: &mut usize, a: &mut Array2<f64>) {
        for v in a.iter_mut() {
            *v = flat[*off];
            *off += 1;
        }
    }
    pub fn take3(flat: &[f64], off: &mut usize, a: &mut Array3<f64>) {
        for v in a.iter_mut() {
            *v = flat[*off];
            *off += 1;
        }
    }
}

/// Which backbone architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Conv1d,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Conv1d => "conv1d",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "conv1d" => Ok(ModelKind::Conv1d),
            other => Err(Error::InvalidParameter(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Recipe for constructing a backbone for a given input shape.
///
/// `width` scales the hidden sizes (500/256 for the MLP, 32/64/128/256 conv
/// channels) so property suites can run on narrow models while defaults keep
/// the full sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub width: f64,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            width: 1.0,
            dropout: 0.2,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec { kind, ..ModelSpec::default() }
    }

    /// Build and initialize a model for `T x C` inputs.
    pub fn build(&self, steps: usize, channels: usize, classes: usize, stream: RngStream) -> Result<Model> {
        if !(self.width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "width multiplier must be > 0, got {}",
                self.width
            )));
        }
        match self.kind {
            ModelKind::Mlp => {
                let h = |base: usize| (((base as f64) * self.width).round() as usize).max(4);
                let arch = MlpArch {
                    input_steps: steps,
                    channels,
                    hidden: [h(500), h(256)],
                    classes,
                    dropout: self.dropout,
                };
                Ok(Model::Mlp(MlpModel::new(arch, stream)?))
            }
            ModelKind::Conv1d => {
                let ch = |base: usize| (((base as f64) * self.width).round() as usize).max(2);
                let arch = ConvArch {
                    input_steps: steps,
                    in_channels: channels,
                    channels: [ch(32), ch(64), ch(128), ch(256)],
                    kernel: 5,
                    classes,
                };
                Ok(Model::Conv1d(ConvModel::new(arch, stream)?))
            }
        }
    }
}

/// A backbone with its parameters and batch-norm running statistics.
#[derive(Debug, Clone)]
pub enum Model {
    Mlp(MlpModel),
    Conv1d(ConvModel),
}

/// Forward-pass intermediates consumed by [`Model::backward`].
pub enum Cache {
    Mlp(mlp::MlpCache),
    Conv1d(conv1d::ConvCache),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Conv1d(_) => ModelKind::Conv1d,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Model::Mlp(m) => m.arch.classes,
            Model::Conv1d(m) => m.arch.classes,
        }
    }

    /// Expected input shape `(T, C)`.
    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            Model::Mlp(m) => (m.arch.input_steps, m.arch.channels),
            Model::Conv1d(m) => (m.arch.input_steps, m.arch.in_channels),
        }
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let (_, t, c) = x.dim();
        if (t, c) != self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "batch shape ({t}, {c}) does not match model input {:?}",
                self.input_shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass: batch-norm uses batch statistics (and
    /// updates running ones), dropout draws masks from `stream`.
    pub fn forward_train(&mut self, x: &Array3<f64>, stream: RngStream) -> Result<(Array2<f64>, Cache)> {
        self.check_input(x)?;
        Ok(match self {
            Model::Mlp(m) => {
                let (logits, cache) = m.forward_train(x, stream);
                (logits, Cache::Mlp(cache))
            }
            Model::Conv1d(m) => {
                let (logits, cache) = m.forward_train(x, stream);
                (logits, Cache::Conv1d(cache))
            }
        })
    }

    /// Eval-mode forward pass: deterministic, running statistics, no dropout.
    pub fn forward_eval(&self, x: &Array3<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(match self {
            Model::Mlp(m) => m.forward_eval(x),
            Model::Conv1d(m) => m.forward_eval(x),
        })
    }

    /// Gradient w.r.t. every parameter, aligned with [`Model::params`].
    pub fn backward(&self, cache: &Cache, dlogits: &Array2<f64>) -> Vec<f64> {
        match (self, cache) {
            (Model::Mlp(m), Cache::Mlp(c)) => m.backward(c, dlogits),
            (Model::Conv1d(m), Cache::Conv1d(c)) => m.backward(c, dlogits),
            _ => panic!("cache does not belong to this model"),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Model::Mlp(m) => m.num_params(),
            Model::Conv1d(m) => m.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Model::Mlp(m) => m.params(),
            Model::Conv1d(m) => m.params(),
        }
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            Model::Mlp(m) => m.set_params(flat),
            Model::Conv1d(m) => m.set_params(flat),
        }
    }

    /// Batch-norm running statistics, flattened.
    pub fn buffers(&self) -> Vec<f64> {
        match self {
            Model::Mlp(m) => m.buffers(),
            Model::Conv1d(m) => m.buffers(),
        }
    }

    pub fn set_buffers(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            Model::Mlp(m) => m.set_buffers(flat),
            Model::Conv1d(m) => m.set_buffers(flat),
        }
    }

    /// Write a binary checkpoint (magic, version, architecture, parameters,
    /// running statistics; all multi-byte values little-endian).
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    /// Load a checkpoint written by [`Model::save`].
    pub fn load(path: &std::path::Path) -> Result<Model> {
        checkpoint::load(path)
    }
}
