use super::{missing_cache, Layer, SeqShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping max pooling over time (window = stride = `width`).
///
/// Trailing steps that do not fill a window are dropped, so the output has
/// `floor(T / width)` steps. Ties resolve to the earliest index.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    width: usize,
    cache: Option<(SeqShape, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("pool width must be at least 1".into()));
        }
        Ok(MaxPool1d { width, cache: None })
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

impl Layer for MaxPool1d {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let s = SeqShape::of(input, "maxpool")?;
        if s.steps < self.width {
            return Err(Error::shape(format!(
                "maxpool: {} steps is shorter than the pool width {}",
                s.steps, self.width
            )));
        }
        let out_steps = s.steps / self.width;
        let c = s.channels;
        let x = input.data();
        let mut out = Vec::with_capacity(s.batch * out_steps * c);
        let mut argmax = Vec::with_capacity(out.capacity());
        for b in 0..s.batch {
            for o in 0..out_steps {
                for ch in 0..c {
                    let mut best_idx = (b * s.steps + o * self.width) * c + ch;
                    let mut best = x[best_idx];
                    for j in 1..self.width {
                        let idx = (b * s.steps + o * self.width + j) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        self.cache = Some((s, argmax));
        Tensor::new(&s.shape_with(out_steps, c), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (s, argmax) = self.cache.as_ref().ok_or_else(|| missing_cache("maxpool"))?;
        s.expect_grad(grad_output, s.steps / self.width, s.channels, "maxpool")?;
        let mut dx = Tensor::zeros(&s.shape_with(s.steps, s.channels));
        let dxd = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_output.data()) {
            dxd[idx] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_maxima() {
        let mut pool = MaxPool1d::new(2).unwrap();
        let x = Tensor::new(&[4, 1], vec![1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(pool.forward(&x, false).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn drops_partial_window_and_keeps_constants() {
        let mut pool = MaxPool1d::new(2).unwrap();
        let x = Tensor::full(&[2, 5, 3], 4.5);
        let y = pool.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn ties_route_to_earliest_index() {
        let mut pool = MaxPool1d::new(3).unwrap();
        let x = Tensor::new(&[3, 1], vec![2.0, 2.0, 2.0]).unwrap();
        pool.forward(&x, true).unwrap();
        let dx = pool.backward(&Tensor::new(&[1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn too_short_input_is_rejected() {
        let mut pool = MaxPool1d::new(4).unwrap();
        assert!(matches!(pool.forward(&Tensor::zeros(&[3, 1]), false), Err(Error::Shape(_))));
    }
}
