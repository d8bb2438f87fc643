//! Gated recurrent unit.
//!
//! ```text
//! z_t = σ([h_{t-1}, x_t]·W_z)           update gate
//! r_t = σ([h_{t-1}, x_t]·W_r)           reset gate
//! ñ_t = tanh([r_t ⊙ h_{t-1}, x_t]·W_h)   candidate
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ ñ_t
//! ```
//!
//! Each gate matrix is `[(H + D), H]` and acts on the concatenation
//! `[hidden, input]`, hidden rows first. The concatenation is never built:
//! the first `H` rows multiply the state and the remaining `D` rows the input,
//! which lets the input half of all three gates be computed for every step in
//! one product up front. Gate biases are off unless requested.

use super::{missing_cache, swap_leading, Layer, Param, SeqShape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, glorot_uniform, sigmoid, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct Gru {
    update: Param,
    reset: Param,
    candidate: Param,
    biases: Option<[Param; 3]>,
    hidden: usize,
    cache: Option<GruCache>,
}

#[derive(Debug, Clone)]
struct GruCache {
    shape: SeqShape,
    x_tm: Vec<f64>,
    // All time-major. `states` has T + 1 blocks of [B, H] (block 0 = h_0 = 0);
    // the rest have T blocks.
    states: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    reset_state: Vec<f64>,
}

/// Intermediate values of one forward pass, exposed for invariant checks.
#[derive(Debug, Clone)]
pub struct GruTrace {
    /// `[B, T, H]` update gate values.
    pub update: Tensor,
    /// `[B, T, H]` reset gate values.
    pub reset: Tensor,
    /// `[B, T, H]` candidate activations.
    pub candidate: Tensor,
    /// `[B, T + 1, H]` hidden states including `h_0`.
    pub states: Tensor,
}

impl Gru {
    pub fn new(inputs: usize, hidden: usize, with_bias: bool, rng: &mut Rng) -> Result<Self> {
        let rows = hidden + inputs;
        let mut gate = || glorot_uniform(&[rows, hidden], rows, hidden, rng);
        let (z, r, h) = (gate()?, gate()?, gate()?);
        let biases = with_bias.then(|| {
            [
                Tensor::zeros(&[hidden]),
                Tensor::zeros(&[hidden]),
                Tensor::zeros(&[hidden]),
            ]
        });
        Self::from_parts(z, r, h, biases)
    }

    /// Builds from explicit gate matrices `[(H + D), H]` (update, reset,
    /// candidate) and optional biases in the same order.
    pub fn from_parts(update: Tensor, reset: Tensor, candidate: Tensor, biases: Option<[Tensor; 3]>) -> Result<Self> {
        let [rows, hidden] = *update.shape() else {
            return Err(Error::shape(format!("gru gate must be rank 2, got {:?}", update.shape())));
        };
        if rows <= hidden {
            return Err(Error::shape(format!(
                "gru gate {:?} leaves no rows for the input",
                update.shape()
            )));
        }
        for g in [&reset, &candidate] {
            if g.shape() != update.shape() {
                return Err(Error::shape(format!(
                    "gru gates disagree: {:?} vs {:?}",
                    g.shape(),
                    update.shape()
                )));
            }
        }
        if let Some(bs) = &biases {
            if bs.iter().any(|b| b.shape() != [hidden]) {
                return Err(Error::shape(format!("gru biases must be [{hidden}]")));
            }
        }
        Ok(Gru {
            update: Param::weight("w_z", update),
            reset: Param::weight("w_r", reset),
            candidate: Param::weight("w_h", candidate),
            biases: biases.map(|[bz, br, bh]| {
                [
                    Param::bias("b_z", bz),
                    Param::bias("b_r", br),
                    Param::bias("b_h", bh),
                ]
            }),
            hidden,
            cache: None,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn inputs(&self) -> usize {
        self.update.value.dim(0) - self.hidden
    }

    /// Gate values and states of the most recent forward pass.
    pub fn trace(&self) -> Option<GruTrace> {
        let c = self.cache.as_ref()?;
        let (b, t, h) = (c.shape.batch, c.shape.steps, self.hidden);
        let to_batch = |v: &[f64], steps: usize| {
            Tensor::new(&[b, steps, h], swap_leading(v, steps, b, h)).expect("cached sizes")
        };
        Some(GruTrace {
            update: to_batch(&c.z, t),
            reset: to_batch(&c.r, t),
            candidate: to_batch(&c.n, t),
            states: to_batch(&c.states, t + 1),
        })
    }

    fn split(param: &Param, hidden: usize) -> (&[f64], &[f64]) {
        param.value.data().split_at(hidden * hidden)
    }
}

impl Layer for Gru {
    fn forward(&mut self, input: &Tensor, _training: bool) -> Result<Tensor> {
        let s = SeqShape::of(input, "gru")?;
        if s.channels != self.inputs() {
            return Err(Error::shape(format!(
                "gru: input width {}, layer expects {}",
                s.channels,
                self.inputs()
            )));
        }
        let (b, t_len, d, h) = (s.batch, s.steps, s.channels, self.hidden);
        let block = b * h;
        let x_tm = swap_leading(input.data(), b, t_len, d);

        // Input halves of the three gates for all steps at once.
        let project = |param: &Param, bias: Option<&Param>| {
            let mut out = vec![0.0; t_len * block];
            if let Some(bias) = bias {
                for row in out.chunks_exact_mut(h) {
                    row.copy_from_slice(bias.value.data());
                }
            }
            let (_, wx) = Self::split(param, h);
            gemm(t_len * b, d, h, &x_tm, false, wx, false, &mut out, 1.0);
            out
        };
        let bias = |i: usize| self.biases.as_ref().map(|bs| &bs[i]);
        let mut z = project(&self.update, bias(0));
        let mut r = project(&self.reset, bias(1));
        let mut n = project(&self.candidate, bias(2));

        let (wz_h, _) = Self::split(&self.update, h);
        let (wr_h, _) = Self::split(&self.reset, h);
        let (wn_h, _) = Self::split(&self.candidate, h);
        let mut states = vec![0.0; (t_len + 1) * block];
        let mut reset_state = vec![0.0; t_len * block];
        for t in 0..t_len {
            let span = t * block..(t + 1) * block;
            let (done, rest) = states.split_at_mut((t + 1) * block);
            let prev = &done[t * block..];
            let next = &mut rest[..block];

            let zt = &mut z[span.clone()];
            gemm(b, h, h, prev, false, wz_h, false, zt, 1.0);
            zt.iter_mut().for_each(|v| *v = sigmoid(*v));
            let rt = &mut r[span.clone()];
            gemm(b, h, h, prev, false, wr_h, false, rt, 1.0);
            rt.iter_mut().for_each(|v| *v = sigmoid(*v));

            let rh = &mut reset_state[span.clone()];
            for i in 0..block {
                rh[i] = rt[i] * prev[i];
            }
            let nt = &mut n[span.clone()];
            gemm(b, h, h, rh, false, wn_h, false, nt, 1.0);
            nt.iter_mut().for_each(|v| *v = v.tanh());

            for i in 0..block {
                next[i] = (1.0 - zt[i]) * prev[i] + zt[i] * nt[i];
            }
        }

        let out = swap_leading(&states[block..], t_len, b, h);
        self.cache = Some(GruCache {
            shape: s,
            x_tm,
            states,
            z,
            r,
            n,
            reset_state,
        });
        Tensor::new(&s.shape_with(t_len, h), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("gru"))?;
        let s = cache.shape;
        let (b, t_len, d, h) = (s.batch, s.steps, s.channels, self.hidden);
        s.expect_grad(grad_output, t_len, h, "gru")?;
        let block = b * h;
        let dy = swap_leading(grad_output.data(), b, t_len, h);

        let hh = h * h;
        let mut dz_all = vec![0.0; t_len * block];
        let mut dr_all = vec![0.0; t_len * block];
        let mut dn_all = vec![0.0; t_len * block];
        let mut carry = vec![0.0; block];
        let mut d_reset_state = vec![0.0; block];

        for t in (0..t_len).rev() {
            let span = t * block..(t + 1) * block;
            let prev = &cache.states[span.clone()];
            let (z, r, n) = (&cache.z[span.clone()], &cache.r[span.clone()], &cache.n[span.clone()]);
            let dh: Vec<f64> = (0..block).map(|i| dy[t * block + i] + carry[i]).collect();

            // Through h_t = (1 - z)·h_prev + z·n.
            let dan = &mut dn_all[span.clone()];
            let daz = &mut dz_all[span.clone()];
            for i in 0..block {
                dan[i] = dh[i] * z[i] * (1.0 - n[i] * n[i]);
                daz[i] = dh[i] * (n[i] - prev[i]) * z[i] * (1.0 - z[i]);
                carry[i] = dh[i] * (1.0 - z[i]);
            }

            // Candidate: its hidden half saw r ⊙ h_prev.
            let rh = &cache.reset_state[span.clone()];
            gemm(h, b, h, rh, true, dan, false, &mut self.candidate.grad.data_mut()[..hh], 1.0);
            gemm(b, h, h, dan, false, &self.candidate.value.data()[..hh], true, &mut d_reset_state, 0.0);
            let dar = &mut dr_all[span.clone()];
            for i in 0..block {
                carry[i] += d_reset_state[i] * r[i];
                dar[i] = d_reset_state[i] * prev[i] * r[i] * (1.0 - r[i]);
            }

            gemm(h, b, h, prev, true, daz, false, &mut self.update.grad.data_mut()[..hh], 1.0);
            gemm(h, b, h, prev, true, dar, false, &mut self.reset.grad.data_mut()[..hh], 1.0);
            gemm(b, h, h, daz, false, &self.update.value.data()[..hh], true, &mut carry, 1.0);
            gemm(b, h, h, dar, false, &self.reset.value.data()[..hh], true, &mut carry, 1.0);
        }

        let rows = t_len * b;
        let mut dx_tm = vec![0.0; rows * d];
        for (param, da) in [
            (&mut self.update, &dz_all),
            (&mut self.reset, &dr_all),
            (&mut self.candidate, &dn_all),
        ] {
            gemm(d, rows, h, &cache.x_tm, true, da, false, &mut param.grad.data_mut()[hh..], 1.0);
            gemm(rows, h, d, da, false, &param.value.data()[hh..], true, &mut dx_tm, 1.0);
        }
        if let Some(biases) = &mut self.biases {
            for (bias, da) in biases.iter_mut().zip([&dz_all, &dr_all, &dn_all]) {
                let sums = Tensor::new(&[rows, h], da.clone())?.column_sums();
                bias.grad.add_assign(&sums)?;
            }
        }
        Tensor::new(&s.shape_with(t_len, d), swap_leading(&dx_tm, t_len, b, d))
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.update, &self.reset, &self.candidate];
        if let Some(bs) = &self.biases {
            out.extend(bs.iter());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.update, &mut self.reset, &mut self.candidate];
        if let Some(bs) = &mut self.biases {
            out.extend(bs.iter_mut());
        }
        out
    }
}
