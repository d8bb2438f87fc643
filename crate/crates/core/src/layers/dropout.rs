use super::{missing_cache, Layer};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Inverted dropout: in training, each unit is zeroed with probability `rate`
/// and survivors are scaled by `1 / (1 - rate)`. Evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: Rng,
    // `None` after an evaluation-mode forward.
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(rate: f64, rng: Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate, rng, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Replaces the mask generator, e.g. to make each mini-batch's masks a
    /// function of (seed, epoch, batch).
    pub fn reseed(&mut self, rng: Rng) {
        self.rng = rng;
    }
}

impl Layer for Dropout {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor> {
        if !training || self.rate == 0.0 {
            self.mask = Some(None);
            return Ok(input.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..input.len())
            .map(|_| if self.rng.bernoulli(self.rate) { 0.0 } else { keep })
            .collect();
        let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.mask = Some(Some(mask));
        Tensor::new(input.shape(), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        match self.mask.as_ref().ok_or_else(|| missing_cache("dropout"))? {
            None => Ok(grad_output.clone()),
            Some(mask) => {
                if mask.len() != grad_output.len() {
                    return Err(Error::shape(format!(
                        "dropout backward: upstream has {} values, mask {}",
                        grad_output.len(),
                        mask.len()
                    )));
                }
                let data = grad_output.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::new(grad_output.shape(), data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_is_bit_identical() {
        let mut d = Dropout::new(0.2, Rng::new(1)).unwrap();
        let x = Rng::new(2).uniform_tensor(&[3, 4], -5.0, 5.0);
        let y = d.forward(&x, false).unwrap();
        assert_eq!(x.data(), y.data());
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn training_expectation_matches_input() {
        let mut d = Dropout::new(0.2, Rng::new(77)).unwrap();
        let ones = Tensor::full(&[100_000], 1.0);
        let y = d.forward(&ones, true).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn backward_uses_the_forward_mask() {
        let mut d = Dropout::new(0.5, Rng::new(3)).unwrap();
        let x = Tensor::full(&[64], 1.0);
        let y = d.forward(&x, true).unwrap();
        let g = d.backward(&x).unwrap();
        assert_eq!(y, g);
    }

    #[test]
    fn rate_out_of_range_is_rejected() {
        assert!(Dropout::new(1.0, Rng::new(0)).is_err());
        assert!(Dropout::new(-0.1, Rng::new(0)).is_err());
    }
}
