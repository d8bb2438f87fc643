use serde::{Deserialize, Serialize};

use super::{missing_cache, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, glorot_uniform, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected layer `y = act(x·W + b)` on `[batch, in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Param,
    bias: Param,
    activation: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        let weight = glorot_uniform(&[inputs, outputs], inputs, outputs, rng)?;
        Self::from_parts(weight, Tensor::zeros(&[outputs]), activation)
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let [_, out] = *weight.shape() else {
            return Err(Error::shape(format!("dense weight must be rank 2, got {:?}", weight.shape())));
        };
        if bias.shape() != [out] {
            return Err(Error::shape(format!(
                "dense bias {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        Ok(Dense {
            weight: Param::weight("weight", weight),
            bias: Param::bias("bias", bias),
            activation,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let [batch, width] = *input.shape() else {
            return Err(Error::shape(format!("dense: expected [batch, in], got {:?}", input.shape())));
        };
        if width != self.inputs() {
            return Err(Error::shape(format!(
                "dense: input width {width}, layer expects {}",
                self.inputs()
            )));
        }
        let out = self.outputs();
        let mut y = Tensor::zeros(&[batch, out]).add_row_bias(&self.bias.value)?;
        gemm(batch, width, out, input.data(), false, self.weight.value.data(), false, y.data_mut(), 1.0);
        if self.activation != Activation::Linear {
            let act = self.activation;
            y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        self.cache = Some((input.clone(), y.clone()));
        Ok(y)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (x, y) = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        if grad_output.shape() != y.shape() {
            return Err(Error::shape(format!(
                "dense backward: upstream {:?}, output {:?}",
                grad_output.shape(),
                y.shape()
            )));
        }
        let act = self.activation;
        let dz: Vec<f64> = grad_output
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &v)| g * act.derivative_from_output(v))
            .collect();
        let (batch, width, out) = (x.dim(0), self.inputs(), self.outputs());
        gemm(width, batch, out, x.data(), true, &dz, false, self.weight.grad.data_mut(), 1.0);
        let dz = Tensor::new(&[batch, out], dz)?;
        self.bias.grad.add_assign(&dz.column_sums())?;
        let mut dx = Tensor::zeros(&[batch, width]);
        gemm(batch, out, width, dz.data(), false, self.weight.value.data(), true, dx.data_mut(), 0.0);
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_are_identity() {
        let mut d = Dense::from_parts(Tensor::identity(3), Tensor::zeros(&[3]), Activation::Linear).unwrap();
        let x = Tensor::from_rows(&[&[1.0, -2.0, 3.5], &[0.0, 4.0, -1.0]]);
        assert_eq!(d.forward(&x, false).unwrap(), x);
    }

    #[test]
    fn activations_apply() {
        let w = Tensor::from_rows(&[&[1.0, 1.0]]);
        let mut relu = Dense::from_parts(w.clone(), Tensor::vector(&[0.0, -5.0]), Activation::Relu).unwrap();
        let y = relu.forward(&Tensor::from_rows(&[&[2.0]]), false).unwrap();
        assert_eq!(y.data(), &[2.0, 0.0]);
        let mut tanh = Dense::from_parts(w, Tensor::zeros(&[2]), Activation::Tanh).unwrap();
        let y = tanh.forward(&Tensor::from_rows(&[&[0.5]]), false).unwrap();
        assert_eq!(y.data(), &[0.5f64.tanh(), 0.5f64.tanh()]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let mut d = Dense::new(3, 2, Activation::Linear, &mut Rng::new(0)).unwrap();
        assert!(matches!(d.forward(&Tensor::zeros(&[1, 2]), false), Err(Error::Shape(_))));
    }
}
