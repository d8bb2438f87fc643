use super::{missing_cache, Layer, Param, SeqShape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, glorot_uniform, Rng, Tensor};

/// 1D cross-correlation over time with zero "same" padding and no stride.
///
/// Kernels are stored `[width, in_channels, out_channels]`, which flattens to
/// exactly the `[width·in, out]` matrix the im2col product needs.
#[derive(Debug, Clone)]
pub struct Conv1d {
    kernel: Param,
    bias: Param,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    shape: SeqShape,
    cols: Vec<f64>,
}

impl Conv1d {
    pub fn new(width: usize, in_channels: usize, out_channels: usize, rng: &mut Rng) -> Result<Self> {
        let kernel = glorot_uniform(
            &[width, in_channels, out_channels],
            width * in_channels,
            width * out_channels,
            rng,
        )?;
        Self::from_parts(kernel, Tensor::zeros(&[out_channels]))
    }

    pub fn from_parts(kernel: Tensor, bias: Tensor) -> Result<Self> {
        let [width, _, out] = *kernel.shape() else {
            return Err(Error::shape(format!(
                "conv1d kernel must be [width, in, out], got {:?}",
                kernel.shape()
            )));
        };
        if width % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel width must be odd, got {width}")));
        }
        if bias.shape() != [out] {
            return Err(Error::shape(format!(
                "conv1d bias {:?} does not match {out} output channels",
                bias.shape()
            )));
        }
        Ok(Conv1d {
            kernel: Param::weight("kernel", kernel),
            bias: Param::bias("bias", bias),
            cache: None,
        })
    }

    pub fn width(&self) -> usize {
        self.kernel.value.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.dim(2)
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel.value
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias.value
    }

    fn im2col(&self, x: &[f64], s: SeqShape) -> Vec<f64> {
        let (k, c) = (self.width(), s.channels);
        let pad = k / 2;
        let row = k * c;
        let mut cols = vec![0.0; s.batch * s.steps * row];
        for b in 0..s.batch {
            for t in 0..s.steps {
                let dst = (b * s.steps + t) * row;
                for j in 0..k {
                    let src_t = t + j;
                    if src_t < pad || src_t - pad >= s.steps {
                        continue;
                    }
                    let src = (b * s.steps + src_t - pad) * c;
                    cols[dst + j * c..dst + (j + 1) * c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
        cols
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let s = SeqShape::of(input, "conv1d")?;
        if s.channels != self.in_channels() {
            return Err(Error::shape(format!(
                "conv1d: input has {} channels, layer expects {}",
                s.channels,
                self.in_channels()
            )));
        }
        let cols = self.im2col(input.data(), s);
        let (rows, inner, out) = (s.batch * s.steps, self.width() * s.channels, self.out_channels());
        let mut y = Tensor::zeros(&s.shape_with(s.steps, out)).add_row_bias(&self.bias.value)?;
        gemm(rows, inner, out, &cols, false, self.kernel.value.data(), false, y.data_mut(), 1.0);
        self.cache = Some(ConvCache { shape: s, cols });
        Ok(y)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("conv1d"))?;
        let s = cache.shape;
        let (k, out) = (self.width(), self.out_channels());
        s.expect_grad(grad_output, s.steps, out, "conv1d")?;
        let (rows, inner) = (s.batch * s.steps, k * s.channels);
        let dy = grad_output.data();

        gemm(inner, rows, out, &cache.cols, true, dy, false, self.kernel.grad.data_mut(), 1.0);
        self.bias.grad.add_assign(&grad_output.column_sums())?;

        let mut dcols = vec![0.0; rows * inner];
        gemm(rows, out, inner, dy, false, self.kernel.value.data(), true, &mut dcols, 0.0);

        let pad = k / 2;
        let c = s.channels;
        let mut dx = Tensor::zeros(&s.shape_with(s.steps, c));
        let dxd = dx.data_mut();
        for b in 0..s.batch {
            for t in 0..s.steps {
                let src = (b * s.steps + t) * inner;
                for j in 0..k {
                    let src_t = t + j;
                    if src_t < pad || src_t - pad >= s.steps {
                        continue;
                    }
                    let dst = (b * s.steps + src_t - pad) * c;
                    for ch in 0..c {
                        dxd[dst + ch] += dcols[src + j * c + ch];
                    }
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = Conv1d::from_parts(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap(), Tensor::zeros(&[1]))
            .unwrap();
        let x = Tensor::new(&[4, 1], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv.forward(&x, false).unwrap(), x);
    }

    #[test]
    fn box_kernel_with_zero_padding() {
        let mut conv =
            Conv1d::from_parts(Tensor::new(&[3, 1, 1], vec![1.0; 3]).unwrap(), Tensor::zeros(&[1])).unwrap();
        let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv.forward(&x, false).unwrap().data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn bias_only_gives_constant_output() {
        let mut conv =
            Conv1d::from_parts(Tensor::zeros(&[3, 2, 2]), Tensor::vector(&[0.7, -1.2])).unwrap();
        let x = Rng::new(3).uniform_tensor(&[2, 5, 2], -1.0, 1.0);
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[2, 5, 2]);
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.7, -1.2]);
        }
    }

    #[test]
    fn same_padding_preserves_length() {
        let mut rng = Rng::new(9);
        for steps in 1..9 {
            for width in [1, 3, 5, 7] {
                let mut conv = Conv1d::new(width, 2, 3, &mut rng).unwrap();
                let y = conv.forward(&Tensor::zeros(&[2, steps, 2]), false).unwrap();
                assert_eq!(y.shape(), &[2, steps, 3]);
            }
        }
    }

    #[test]
    fn bias_gradient_is_column_sum_of_upstream() {
        let mut rng = Rng::new(4);
        let mut conv = Conv1d::new(3, 2, 3, &mut rng).unwrap();
        let x = rng.uniform_tensor(&[2, 7, 2], -1.0, 1.0);
        conv.forward(&x, true).unwrap();
        let up = rng.uniform_tensor(&[2, 7, 3], -1.0, 1.0);
        conv.backward(&up).unwrap();
        let sums = up.column_sums();
        for (g, s) in conv.bias.grad.data().iter().zip(sums.data()) {
            assert!((g - s).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(5);
        let mut conv = Conv1d::new(3, 2, 3, &mut rng).unwrap();
        let x = rng.uniform_tensor(&[7, 2], -1.0, 1.0);
        conv.forward(&x, true).unwrap();
        let dx = conv.backward(&Tensor::zeros(&[7, 3])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(conv.params().iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_channel_mismatch_and_even_width() {
        let mut rng = Rng::new(1);
        let mut conv = Conv1d::new(3, 2, 1, &mut rng).unwrap();
        assert!(matches!(conv.forward(&Tensor::zeros(&[4, 3]), false), Err(Error::Shape(_))));
        assert!(Conv1d::new(2, 1, 1, &mut rng).is_err());
    }
}
