//! Attention pooling over the steps of a hidden-state sequence:
//!
//! ```text
//! e_t = tanh(h_t·W + b)        scoring transform, width A
//! α   = softmax_t(e_t · c)     c: learned context vector
//! r   = Σ_t α_t h_t
//! ```

use super::{missing_cache, Layer, Param, SeqShape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, glorot_uniform, softmax_in_place, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct Attention {
    weight: Param,
    bias: Param,
    context: Param,
    cache: Option<AttentionCache>,
}

#[derive(Debug, Clone)]
struct AttentionCache {
    shape: SeqShape,
    input: Vec<f64>,
    scores: Vec<f64>,
    alpha: Vec<f64>,
}

impl Attention {
    pub fn new(hidden: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        let w = glorot_uniform(&[hidden, width], hidden, width, rng)?;
        let c = glorot_uniform(&[width], width, 1, rng)?;
        Self::from_parts(w, Tensor::zeros(&[width]), c)
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, context: Tensor) -> Result<Self> {
        let [_, width] = *weight.shape() else {
            return Err(Error::shape(format!("attention W must be rank 2, got {:?}", weight.shape())));
        };
        if bias.shape() != [width] || context.shape() != [width] {
            return Err(Error::shape(format!(
                "attention bias {:?} / context {:?} must both be [{width}]",
                bias.shape(),
                context.shape()
            )));
        }
        Ok(Attention {
            weight: Param::weight("w", weight),
            bias: Param::bias("b", bias),
            // The context vector is a weight, so it takes the L2 penalty.
            context: Param::weight("context", context),
            cache: None,
        })
    }

    pub fn hidden(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn width(&self) -> usize {
        self.weight.value.dim(1)
    }

    /// Forward pass returning both the pooled representation and the weights
    /// (`[B, T]`, or `[T]` for an unbatched input).
    pub fn attend(&mut self, hidden_states: &Tensor) -> Result<(Tensor, Tensor)> {
        let r = self.forward(hidden_states, false)?;
        let alpha = self.weights().expect("forward just ran");
        Ok((r, alpha))
    }

    /// Attention weights from the most recent forward pass.
    pub fn weights(&self) -> Option<Tensor> {
        let c = self.cache.as_ref()?;
        let shape: Vec<usize> = if c.shape.unbatched {
            vec![c.shape.steps]
        } else {
            vec![c.shape.batch, c.shape.steps]
        };
        Tensor::new(&shape, c.alpha.clone()).ok()
    }
}

impl Layer for Attention {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let s = SeqShape::of(input, "attention")?;
        if s.channels != self.hidden() {
            return Err(Error::shape(format!(
                "attention: hidden width {}, layer expects {}",
                s.channels,
                self.hidden()
            )));
        }
        if s.steps == 0 {
            return Err(Error::shape("attention: empty sequence"));
        }
        let (b, t_len, h, a) = (s.batch, s.steps, s.channels, self.width());
        let rows = b * t_len;
        let x = input.data();

        let mut scores = vec![0.0; rows * a];
        for row in scores.chunks_exact_mut(a) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(rows, h, a, x, false, self.weight.value.data(), false, &mut scores, 1.0);
        scores.iter_mut().for_each(|v| *v = v.tanh());

        let c = self.context.value.data();
        let mut alpha: Vec<f64> = scores
            .chunks_exact(a)
            .map(|e| e.iter().zip(c).map(|(x, y)| x * y).sum())
            .collect();
        for seq in alpha.chunks_exact_mut(t_len) {
            softmax_in_place(seq);
        }

        let mut pooled = vec![0.0; b * h];
        for bi in 0..b {
            let out = &mut pooled[bi * h..(bi + 1) * h];
            for t in 0..t_len {
                let w = alpha[bi * t_len + t];
                let row = &x[(bi * t_len + t) * h..(bi * t_len + t + 1) * h];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        self.cache = Some(AttentionCache {
            shape: s,
            input: x.to_vec(),
            scores,
            alpha,
        });
        if s.unbatched {
            Ok(Tensor::vector(&pooled))
        } else {
            Tensor::new(&[b, h], pooled)
        }
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("attention"))?;
        let s = cache.shape;
        let (b, t_len, h, a) = (s.batch, s.steps, s.channels, self.width());
        if grad_output.len() != b * h {
            return Err(Error::shape(format!(
                "attention backward: upstream {:?} does not match [{b}, {h}]",
                grad_output.shape()
            )));
        }
        let dr = grad_output.data();
        let x = &cache.input;
        let rows = b * t_len;

        let mut dx = vec![0.0; rows * h];
        let mut dscore = vec![0.0; rows];
        for bi in 0..b {
            let g = &dr[bi * h..(bi + 1) * h];
            let alpha = &cache.alpha[bi * t_len..(bi + 1) * t_len];
            let mut dalpha = vec![0.0; t_len];
            for t in 0..t_len {
                let row = (bi * t_len + t) * h;
                dalpha[t] = g.iter().zip(&x[row..row + h]).map(|(p, q)| p * q).sum();
                for (d, gv) in dx[row..row + h].iter_mut().zip(g) {
                    *d = alpha[t] * gv;
                }
            }
            let mean: f64 = alpha.iter().zip(&dalpha).map(|(p, q)| p * q).sum();
            for t in 0..t_len {
                dscore[bi * t_len + t] = alpha[t] * (dalpha[t] - mean);
            }
        }

        let c = self.context.value.data().to_vec();
        let mut du = vec![0.0; rows * a];
        {
            let dc = self.context.grad.data_mut();
            for (row, &ds) in dscore.iter().enumerate() {
                let e = &cache.scores[row * a..(row + 1) * a];
                let out = &mut du[row * a..(row + 1) * a];
                for j in 0..a {
                    dc[j] += ds * e[j];
                    out[j] = ds * c[j] * (1.0 - e[j] * e[j]);
                }
            }
        }
        gemm(h, rows, a, x, true, &du, false, self.weight.grad.data_mut(), 1.0);
        let du_t = Tensor::new(&[rows, a], du)?;
        self.bias.grad.add_assign(&du_t.column_sums())?;
        gemm(rows, a, h, du_t.data(), false, self.weight.value.data(), true, &mut dx, 1.0);
        Tensor::new(&s.shape_with(t_len, h), dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias, &self.context]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias, &mut self.context]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_gets_all_the_weight() {
        let mut rng = Rng::new(4);
        let mut att = Attention::new(3, 3, &mut rng).unwrap();
        let h = rng.uniform_tensor(&[1, 3], -1.0, 1.0);
        let (r, alpha) = att.attend(&h).unwrap();
        assert_eq!(alpha.data(), &[1.0]);
        assert_eq!(r.data(), h.data());
    }

    #[test]
    fn identical_states_give_uniform_weights() {
        let mut rng = Rng::new(5);
        let mut att = Attention::new(3, 2, &mut rng).unwrap();
        let row = [0.3, -0.7, 0.9];
        let h = Tensor::new(&[4, 3], row.repeat(4)).unwrap();
        let (r, alpha) = att.attend(&h).unwrap();
        assert!(alpha.data().iter().all(|&a| (a - 0.25).abs() < 1e-12));
        for (x, y) in r.data().iter().zip(row) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
