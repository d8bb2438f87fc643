//! Trainable building blocks with hand-derived backward passes.
//!
//! Every layer caches what it needs during `forward` and consumes that cache in
//! `backward`, which returns the gradient with respect to the layer input and
//! *accumulates* parameter gradients into each [`Param::grad`]. Callers zero
//! the gradients between optimizer steps.
//!
//! Sequence layers take `[batch, steps, channels]` tensors. A rank-2
//! `[steps, channels]` input is treated as a batch of one and the output keeps
//! the unbatched rank.

mod activation;
mod attention;
mod conv;
mod dense;
mod dropout;
mod gru;
mod pool;
mod rnn;

pub use activation::{Flatten, LastStep, Relu};
pub use attention::Attention;
pub use conv::Conv1d;
pub use dense::{Activation, Dense};
pub use dropout::Dropout;
pub use gru::Gru;
pub use pool::MaxPool1d;
pub use rnn::Rnn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether the L2 penalty applies (weights and kernels, not biases).
    pub decay: bool,
}

impl Param {
    pub fn weight(name: &str, value: Tensor) -> Self {
        Self::new(name, value, true)
    }

    pub fn bias(name: &str, value: Tensor) -> Self {
        Self::new(name, value, false)
    }

    fn new(name: &str, value: Tensor, decay: bool) -> Self {
        Param {
            name: name.to_string(),
            grad: Tensor::zeros(value.shape()),
            value,
            decay,
        }
    }
}

pub trait Layer {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor>;

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }
}

/// Batch/step/channel extents of a sequence input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SeqShape {
    pub batch: usize,
    pub steps: usize,
    pub channels: usize,
    pub unbatched: bool,
}

impl SeqShape {
    pub fn of(x: &Tensor, layer: &str) -> Result<Self> {
        match *x.shape() {
            [steps, channels] => Ok(SeqShape {
                batch: 1,
                steps,
                channels,
                unbatched: true,
            }),
            [batch, steps, channels] => Ok(SeqShape {
                batch,
                steps,
                channels,
                unbatched: false,
            }),
            _ => Err(Error::shape(format!(
                "{layer}: expected [batch, steps, channels] or [steps, channels], got {:?}",
                x.shape()
            ))),
        }
    }

    /// Output shape with `steps` and `channels` replaced.
    pub fn shape_with(&self, steps: usize, channels: usize) -> Vec<usize> {
        if self.unbatched {
            vec![steps, channels]
        } else {
            vec![self.batch, steps, channels]
        }
    }

    pub fn expect_grad(&self, grad: &Tensor, steps: usize, channels: usize, layer: &str) -> Result<()> {
        let want = self.shape_with(steps, channels);
        if grad.shape() != want.as_slice() {
            return Err(Error::shape(format!(
                "{layer} backward: upstream gradient {:?}, expected {:?}",
                grad.shape(),
                want
            )));
        }
        Ok(())
    }
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::shape(format!("{layer}: backward called before forward"))
}

/// `[batch, steps, ch]` → `[steps, batch, ch]` (and the inverse, by swapping
/// the first two arguments).
pub(crate) fn swap_leading(data: &[f64], outer: usize, inner: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let src = (o * inner + i) * ch;
            let dst = (i * outer + o) * ch;
            out[dst..dst + ch].copy_from_slice(&data[src..src + ch]);
        }
    }
    out
}
