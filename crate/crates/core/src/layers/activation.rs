use super::{missing_cache, Layer, SeqShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    output: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let y = input.relu();
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or_else(|| missing_cache("relu"))?;
        if y.shape() != grad_output.shape() {
            return Err(Error::shape(format!(
                "relu backward: upstream {:?}, output {:?}",
                grad_output.shape(),
                y.shape()
            )));
        }
        let data = grad_output
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(y.shape(), data)
    }
}

/// Selects the final step of a sequence: `[B, T, C]` → `[B, C]`.
#[derive(Debug, Clone, Default)]
pub struct LastStep {
    shape: Option<SeqShape>,
}

impl LastStep {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for LastStep {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let s = SeqShape::of(input, "last_step")?;
        if s.steps == 0 {
            return Err(Error::shape("last_step: empty sequence"));
        }
        let mut out = Vec::with_capacity(s.batch * s.channels);
        for b in 0..s.batch {
            let start = (b * s.steps + s.steps - 1) * s.channels;
            out.extend_from_slice(&input.data()[start..start + s.channels]);
        }
        self.shape = Some(s);
        if s.unbatched {
            Ok(Tensor::vector(&out))
        } else {
            Tensor::new(&[s.batch, s.channels], out)
        }
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let s = self.shape.ok_or_else(|| missing_cache("last_step"))?;
        if grad_output.len() != s.batch * s.channels {
            return Err(Error::shape(format!(
                "last_step backward: upstream {:?} does not match batch {} x {}",
                grad_output.shape(),
                s.batch,
                s.channels
            )));
        }
        let mut dx = Tensor::zeros(&s.shape_with(s.steps, s.channels));
        for b in 0..s.batch {
            let dst = (b * s.steps + s.steps - 1) * s.channels;
            dx.data_mut()[dst..dst + s.channels]
                .copy_from_slice(&grad_output.data()[b * s.channels..(b + 1) * s.channels]);
        }
        Ok(dx)
    }
}

/// `[B, T, C]` → `[B, T·C]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let batch = *input
            .shape()
            .first()
            .ok_or_else(|| Error::shape("flatten: scalar input"))?;
        let width = if batch == 0 { 0 } else { input.len() / batch };
        self.input_shape = Some(input.shape().to_vec());
        input.clone().reshape(&[batch, width])
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        grad_output.clone().reshape(shape)
    }
}
