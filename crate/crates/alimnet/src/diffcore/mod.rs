//! Minimal reverse-mode differentiable layer engine.
//!
//! The catalog is exactly what the two fixed architectures need: dense,
//! 3x3 same-padded convolution, 2x2 max pooling, 2x2 nearest upsampling,
//! batch normalization, dropout, a double-bias GRU, pointwise activations
//! and softmax. Layers cache what their backward pass needs during
//! `forward`; `backward` accumulates parameter gradients and returns the
//! gradient with respect to the input. Central-difference verification of
//! every analytic gradient lives in [`gradcheck`].

mod adam;
mod gradcheck;
mod gru;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_layer_gradients, gradient_check, layer_catalog_report, CatalogEntry};
pub use gru::Gru;
pub use layers::{
    Activation, ActivationKind, BatchNorm, Conv2d, Dense, Dropout, MaxPool2d, Reshape, Sequential,
    UpsampleNearest,
};
pub use tensor::Tensor;

use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm, active dropout.
    Train,
    /// Moving statistics in batchnorm, dropout is the identity.
    Infer,
}

/// Per-call context threaded through every layer.
pub struct Ctx<'r> {
    pub mode: Mode,
    /// When false, train-mode batchnorm still normalizes by batch
    /// statistics but leaves the moving estimates untouched. Used when a
    /// frozen network participates in someone else's training step.
    pub update_stats: bool,
    /// When true, dropout is the identity even in train mode (gradient
    /// checks and other reproducibility harnesses).
    pub deterministic: bool,
    pub rng: &'r mut ChaCha8Rng,
}

impl<'r> Ctx<'r> {
    pub fn train(rng: &'r mut ChaCha8Rng) -> Ctx<'r> {
        Ctx {
            mode: Mode::Train,
            update_stats: true,
            deterministic: false,
            rng,
        }
    }

    /// Train-mode forward through a network whose state must not change.
    pub fn train_frozen(rng: &'r mut ChaCha8Rng) -> Ctx<'r> {
        Ctx {
            mode: Mode::Train,
            update_stats: false,
            deterministic: false,
            rng,
        }
    }

    pub fn infer(rng: &'r mut ChaCha8Rng) -> Ctx<'r> {
        Ctx {
            mode: Mode::Infer,
            update_stats: false,
            deterministic: true,
            rng,
        }
    }
}

/// One named parameter of a layer. `tensor.requires_grad()` distinguishes
/// trainable weights from bookkeeping state such as moving statistics.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub role: &'static str,
    pub tensor: Tensor,
}

/// Ordered set of named parameter tensors belonging to one layer.
#[derive(Debug, Clone, Default)]
pub struct LayerParams {
    entries: Vec<ParamEntry>,
}

impl LayerParams {
    pub fn new() -> LayerParams {
        LayerParams::default()
    }

    pub fn push(&mut self, role: &'static str, mut tensor: Tensor, trainable: bool) {
        if trainable {
            tensor.enable_grad();
        }
        self.entries.push(ParamEntry { role, tensor });
    }

    pub fn get(&self, role: &str) -> &Tensor {
        &self
            .entries
            .iter()
            .find(|e| e.role == role)
            .unwrap_or_else(|| panic!("no parameter with role {role:?}"))
            .tensor
    }

    pub fn get_mut(&mut self, role: &str) -> &mut Tensor {
        &mut self
            .entries
            .iter_mut()
            .find(|e| e.role == role)
            .unwrap_or_else(|| panic!("no parameter with role {role:?}"))
            .tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over every entry, trainable or not. Matches the
    /// parameter bookkeeping of the published layer tables (batchnorm
    /// counts gamma, beta and both moving statistics).
    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.iter_mut() {
            e.tensor.zero_grad();
        }
    }
}

/// A differentiable layer. One forward followed by one backward; the
/// forward caches whatever the backward needs.
pub trait Layer {
    /// Instance name used in parameter paths ("conv1", "gru2", ...).
    fn name(&self) -> &str;

    /// Human-readable kind with geometry, e.g. "conv 3x3, 16 -> 32".
    fn describe(&self) -> String;

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor>;

    /// Accumulates parameter gradients and returns the gradient with
    /// respect to the layer input.
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    fn params(&self) -> &LayerParams;

    fn params_mut(&mut self) -> &mut LayerParams;

    fn param_count(&self) -> usize {
        self.params().total_count()
    }

    /// Output shape for a given input shape (leading batch dimension
    /// included), without running the layer.
    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>>;
}
