use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Applies one update using each parameter's accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((i, p)) = params
            .iter()
            .enumerate()
            .find(|(i, p)| p.value.shape() != self.m[*i].shape() || p.grad.shape() != p.value.shape())
        {
            return Err(Error::shape(format!(
                "parameter {i} ({}) has shape {:?}, optimizer state {:?}",
                p.name,
                p.value.shape(),
                self.m[i].shape()
            )));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad, .. } = &mut **p;
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &g), (m, v)) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, -0.5, 3.0, 1e4] {
            let mut p = Param::weight("w", Tensor::vector(&[2.0]));
            p.grad = Tensor::vector(&[g]);
            let mut adam = Adam::new(AdamConfig::default(), &[&p]);
            adam.step(&mut [&mut p]).unwrap();
            let delta = (p.value.data()[0] - 2.0).abs();
            assert!((delta - 1e-3).abs() / 1e-3 < 1e-5, "g={g}: {delta}");
            assert_eq!(adam.steps(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Param::weight("w", Tensor::vector(&[1.0, -2.0]));
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..100 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(adam.steps(), 100);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Param::weight("w", Tensor::vector(&[1.0]));
        let mut q = Param::weight("w", Tensor::vector(&[1.0, 2.0]));
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        assert!(adam.step(&mut [&mut q]).is_err());
    }
}
