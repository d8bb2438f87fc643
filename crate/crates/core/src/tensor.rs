//! Dense row-major `f64` arrays and the handful of numerics the layers need.
//!
//! There is no broadcasting. Binary operations require identical shapes; the
//! only exception is [`Tensor::add_row_bias`], which adds a vector to every row
//! of a matrix (or to every innermost row of a higher-rank tensor).
//!
//! Matrix products go through `matrixmultiply::dgemm`. Transposed operands are
//! expressed with strides, so `aᵀ·b` and `a·bᵀ` never materialize a copy.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Builds a rank-2 tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of squares (squared Frobenius norm).
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Adds `bias` (length = innermost extent) to every innermost row.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let cols = *self.shape.last().unwrap_or(&1);
        if bias.rank() != 1 || bias.len() != cols {
            return Err(Error::shape(format!(
                "row bias {:?} does not fit rows of {:?}",
                bias.shape, self.shape
            )));
        }
        let mut out = self.clone();
        if cols > 0 {
            for row in out.data.chunks_exact_mut(cols) {
                for (v, b) in row.iter_mut().zip(&bias.data) {
                    *v += b;
                }
            }
        }
        Ok(out)
    }

    /// Sums over all leading axes, leaving a vector of the innermost extent.
    pub fn column_sums(&self) -> Tensor {
        let cols = *self.shape.last().unwrap_or(&1);
        let mut out = vec![0.0; cols];
        if cols > 0 {
            for row in self.data.chunks_exact(cols) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        Tensor::vector(&out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.as_matrix("transpose")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    fn as_matrix(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "{op}: expected a rank-2 tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner extents differ ({:?} x {:?})",
                self.shape, other.shape
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out.data, 0.0);
        Ok(out)
    }

    /// Numerically stable softmax of a non-empty vector.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(Error::shape(format!(
                "softmax expects a vector, got {:?}",
                self.shape
            )));
        }
        if self.data.is_empty() {
            return Err(Error::shape("softmax of an empty vector"));
        }
        let mut out = self.data.clone();
        softmax_in_place(&mut out);
        Ok(Tensor::vector(&out))
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// `c = op(a)·op(b) + beta·c` on row-major buffers, where `op(a)` is `m×k`
/// and `op(b)` is `k×n`. A transposed operand is stored as its untransposed
/// original (`k×m` for `a`, `n×k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the slices are sized for the stated extents (asserted above in
    // debug builds, guaranteed by every caller's shape checks) and `c` does
    // not alias `a` or `b` since it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Seeded random source (ChaCha8). The stream depends only on the seed, so
/// runs are reproducible across machines.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw from `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, spelled out so the permutation is pinned to our draws.
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }

    /// Independent child generator derived from this one's stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform(lo, hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Glorot (Xavier) uniform initialization: `U(-l, l)` with
/// `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Config("glorot_uniform: fan_in must be at least 1".into()));
    }
    let limit = glorot_limit(fan_in, fan_out);
    Ok(rng.uniform_tensor(shape, -limit, limit))
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = f(&probe)?;
        probe.data[i] = orig - h;
        let minus = f(&probe)?;
        probe.data[i] = orig;
        grad.data[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> Result<f64> {
    a.same_shape(b, "max_relative_error")?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let x = Tensor::from_rows(&[&[1.5, -2.0], &[0.25, 4.0]]);
        assert_eq!(Tensor::identity(2).matmul(&x).unwrap(), x);

        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[5.0], &[6.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_extent() {
        let a = Tensor::zeros(&[1, 3]);
        let b = Tensor::zeros(&[2, 2]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn gemm_transposed_operands() {
        let a = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::from_rows(&[&[1.0, 0.5], &[-1.0, 2.0]]);
        // aᵀ·b with a stored 2x3
        let mut c = vec![0.0; 6];
        gemm(3, 2, 2, a.data(), true, b.data(), false, &mut c, 0.0);
        let expect = a.transpose().unwrap().matmul(&b).unwrap();
        assert!(close(&c, expect.data(), 1e-12));
        // a·aᵀ with accumulation
        let mut c = vec![1.0; 4];
        gemm(2, 3, 2, a.data(), false, a.data(), true, &mut c, 1.0);
        assert!(close(&c, &[15.0, 33.0, 33.0, 78.0], 1e-12));
    }

    #[test]
    fn elementwise_fixed_points() {
        assert_eq!(Tensor::scalar(0.0).tanh().data(), &[0.0]);
        assert_eq!(Tensor::scalar(0.0).sigmoid().data(), &[0.5]);
        assert_eq!(Tensor::scalar(-3.0).relu().data(), &[0.0]);
        let s = Tensor::vector(&[800.0, -800.0]).sigmoid();
        assert_eq!(s.data(), &[1.0, 0.0]);
        assert!(s.all_finite());
        let sum = Tensor::vector(&[1.0, 2.0]).add(&Tensor::vector(&[3.0, 4.0])).unwrap();
        assert_eq!(sum.data(), &[4.0, 6.0]);
        assert!(Tensor::vector(&[1.0]).add(&Tensor::vector(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn row_bias_is_the_only_broadcast() {
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = m.add_row_bias(&Tensor::vector(&[10.0, 20.0])).unwrap();
        assert_eq!(out.data(), &[11.0, 22.0, 13.0, 24.0]);
        assert!(m.add_row_bias(&Tensor::vector(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn softmax_cases() {
        let u = Tensor::vector(&[3.3; 4]).softmax().unwrap();
        assert!(close(u.data(), &[0.25; 4], 1e-15));
        let p = Tensor::vector(&[0.0, 3f64.ln()]).softmax().unwrap();
        assert!(close(p.data(), &[0.25, 0.75], 1e-15));
        let big = Tensor::vector(&[1000.0, 0.0]).softmax().unwrap();
        assert!(big.all_finite());
        assert!((big.data()[0] - 1.0).abs() < 1e-15 && big.data()[1] < 1e-300);
        assert!(Tensor::vector(&[]).softmax().is_err());
    }

    #[test]
    fn fd_gradient_oracle_cases() {
        let g = fd_gradient(|x| Ok(x.sq_norm()), &Tensor::vector(&[1.0, 2.0]), 1e-5).unwrap();
        assert!(close(g.data(), &[2.0, 4.0], 1e-6));
        let g = fd_gradient(|_| Ok(7.0), &Tensor::vector(&[1.0, 2.0, 3.0]), 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
        let g = fd_gradient(|x| Ok(x.data()[0] * x.data()[1]), &Tensor::vector(&[3.0, 5.0]), 1e-5)
            .unwrap();
        assert!(close(g.data(), &[5.0, 3.0], 1e-6));
    }

    #[test]
    fn glorot_range_and_determinism() {
        let limit = glorot_limit(5, 7);
        let a = glorot_uniform(&[5, 7], 5, 7, &mut Rng::new(11)).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
        let b = glorot_uniform(&[5, 7], 5, 7, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        let c = glorot_uniform(&[5, 7], 5, 7, &mut Rng::new(12)).unwrap();
        assert_ne!(a, c);
        assert!(glorot_uniform(&[0, 3], 1, 3, &mut Rng::new(1)).unwrap().is_empty());
        assert!(glorot_uniform(&[2], 0, 2, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn rng_stream_is_pinned() {
        // Frozen from the first run; guards against silent generator changes.
        let mut rng = Rng::new(42);
        let draws: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(draws, PINNED_DRAWS);
    }

    const PINNED_DRAWS: [u64; 3] = [12578764544318200737, 17529487244874322312, 7886285670807131020];
}
