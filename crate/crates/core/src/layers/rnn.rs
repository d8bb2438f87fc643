use super::{missing_cache, swap_leading, Layer, Param, SeqShape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, glorot_uniform, Rng, Tensor};

/// Plain tanh recurrence `s_t = tanh(x_t·U + s_{t-1}·W)` with `s_0 = 0`,
/// parameters shared across steps. Returns every state `[B, T, H]`; the
/// output projection (`V`) is whatever layer consumes the states.
#[derive(Debug, Clone)]
pub struct Rnn {
    input_weight: Param,
    recurrent_weight: Param,
    bias: Option<Param>,
    cache: Option<RnnCache>,
}

#[derive(Debug, Clone)]
struct RnnCache {
    shape: SeqShape,
    x_tm: Vec<f64>,
    // time-major, (T + 1) blocks of [B, H]; block 0 is the zero state
    states: Vec<f64>,
}

impl Rnn {
    pub fn new(inputs: usize, hidden: usize, with_bias: bool, rng: &mut Rng) -> Result<Self> {
        let u = glorot_uniform(&[inputs, hidden], inputs, hidden, rng)?;
        let w = glorot_uniform(&[hidden, hidden], hidden, hidden, rng)?;
        let b = with_bias.then(|| Tensor::zeros(&[hidden]));
        Self::from_parts(u, w, b)
    }

    pub fn from_parts(u: Tensor, w: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let [_, hidden] = *u.shape() else {
            return Err(Error::shape(format!("rnn U must be rank 2, got {:?}", u.shape())));
        };
        if w.shape() != [hidden, hidden] {
            return Err(Error::shape(format!("rnn W must be [{hidden}, {hidden}], got {:?}", w.shape())));
        }
        if let Some(b) = &bias {
            if b.shape() != [hidden] {
                return Err(Error::shape(format!("rnn bias must be [{hidden}], got {:?}", b.shape())));
            }
        }
        Ok(Rnn {
            input_weight: Param::weight("u", u),
            recurrent_weight: Param::weight("w", w),
            bias: bias.map(|b| Param::bias("b", b)),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.input_weight.value.dim(0)
    }

    pub fn hidden(&self) -> usize {
        self.input_weight.value.dim(1)
    }
}

impl Layer for Rnn {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let s = SeqShape::of(input, "rnn")?;
        if s.channels != self.inputs() {
            return Err(Error::shape(format!(
                "rnn: input width {}, layer expects {}",
                s.channels,
                self.inputs()
            )));
        }
        let (b, t_len, d, h) = (s.batch, s.steps, s.channels, self.hidden());
        let x_tm = swap_leading(input.data(), b, t_len, d);
        let mut pre = vec![0.0; t_len * b * h];
        if let Some(bias) = &self.bias {
            for row in pre.chunks_exact_mut(h) {
                row.copy_from_slice(bias.value.data());
            }
        }
        gemm(t_len * b, d, h, &x_tm, false, self.input_weight.value.data(), false, &mut pre, 1.0);

        let block = b * h;
        let mut states = vec![0.0; (t_len + 1) * block];
        for t in 0..t_len {
            let (prev, next) = states.split_at_mut((t + 1) * block);
            let prev = &prev[t * block..];
            let next = &mut next[..block];
            next.copy_from_slice(&pre[t * block..(t + 1) * block]);
            gemm(b, h, h, prev, false, self.recurrent_weight.value.data(), false, next, 1.0);
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        let out = swap_leading(&states[block..], t_len, b, h);
        self.cache = Some(RnnCache { shape: s, x_tm, states });
        Tensor::new(&s.shape_with(t_len, h), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("rnn"))?;
        let s = cache.shape;
        let (b, t_len, d, h) = (s.batch, s.steps, s.channels, self.hidden());
        s.expect_grad(grad_output, t_len, h, "rnn")?;
        let dy = swap_leading(grad_output.data(), b, t_len, h);
        let block = b * h;

        let mut da_all = vec![0.0; t_len * block];
        let mut carry = vec![0.0; block];
        for t in (0..t_len).rev() {
            let state = &cache.states[(t + 1) * block..(t + 2) * block];
            let da = &mut da_all[t * block..(t + 1) * block];
            for i in 0..block {
                da[i] = (dy[t * block + i] + carry[i]) * (1.0 - state[i] * state[i]);
            }
            let prev = &cache.states[t * block..(t + 1) * block];
            gemm(h, b, h, prev, true, da, false, self.recurrent_weight.grad.data_mut(), 1.0);
            gemm(b, h, h, da, false, self.recurrent_weight.value.data(), true, &mut carry, 0.0);
        }

        gemm(d, t_len * b, h, &cache.x_tm, true, &da_all, false, self.input_weight.grad.data_mut(), 1.0);
        if let Some(bias) = &mut self.bias {
            let sums = Tensor::new(&[t_len * b, h], da_all.clone())?.column_sums();
            bias.grad.add_assign(&sums)?;
        }
        let mut dx_tm = vec![0.0; t_len * b * d];
        gemm(t_len * b, h, d, &da_all, false, self.input_weight.value.data(), true, &mut dx_tm, 0.0);
        Tensor::new(&s.shape_with(t_len, d), swap_leading(&dx_tm, t_len, b, d))
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.input_weight, &self.recurrent_weight];
        out.extend(self.bias.as_ref());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.input_weight, &mut self.recurrent_weight];
        out.extend(self.bias.as_mut());
        out
    }
}
