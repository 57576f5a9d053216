//! Flat row-major tensors and the few dense kernels the cells need.
//!
//! Everything is generic over [`Scalar`] so the pipeline runs in f32 while
//! gradient checks instantiate the exact same code in f64. The kernels use
//! fixed-order lane accumulators: results are reproducible bit-for-bit for
//! a given type, independent of optimization level.

use rand::Rng;

pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A named parameter (or activation) tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![F::zero(); n],
            grad: vec![F::zero(); n],
        }
    }

    /// Uniform(-scale, scale) init, drawn as f64 so every `Scalar` type sees
    /// the same stream from a given RNG state.
    pub fn uniform(name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut impl Rng) -> Self {
        let mut t = Tensor::zeros(name, shape);
        for v in &mut t.values {
            *v = F::from_f64(rng.gen_range(-scale..scale));
        }
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[F] {
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn grad_row_mut(&mut self, r: usize) -> &mut [F] {
        let cols = self.shape[1];
        &mut self.grad[r * cols..(r + 1) * cols]
    }
}

/// Dot product with four fixed-order accumulator lanes.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [F::zero(); 4];
    let chunks = a.len() / 4;
    for (ca, cb) in a[..chunks * 4].chunks_exact(4).zip(b[..chunks * 4].chunks_exact(4)) {
        lanes[0] = lanes[0] + ca[0] * cb[0];
        lanes[1] = lanes[1] + ca[1] * cb[1];
        lanes[2] = lanes[2] + ca[2] * cb[2];
        lanes[3] = lanes[3] + ca[3] * cb[3];
    }
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// `out += W x` for row-major `W` of `rows x cols`.
#[inline]
pub fn matvec_accum<F: Scalar>(w: &[F], rows: usize, cols: usize, x: &[F], out: &mut [F]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (o, w_row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = *o + dot(w_row, x);
    }
}

/// `out += a * x` (scaled vector add).
#[inline]
pub fn axpy<F: Scalar>(out: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = *o + a * xi;
    }
}

/// `dx += W^T dy` for row-major `W` of `rows x cols`.
#[inline]
pub fn matvec_t_accum<F: Scalar>(w: &[F], rows: usize, cols: usize, dy: &[F], dx: &mut [F]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(dx.len(), cols);
    for (&dyr, w_row) in dy.iter().zip(w.chunks_exact(cols)) {
        axpy(dx, dyr, w_row);
    }
}

/// `dW += dy ⊗ x` (outer product into a `rows x cols` gradient).
#[inline]
pub fn outer_accum<F: Scalar>(dw: &mut [F], dy: &[F], x: &[F]) {
    debug_assert_eq!(dw.len(), dy.len() * x.len());
    for (&dyr, dw_row) in dy.iter().zip(dw.chunks_exact_mut(x.len())) {
        axpy(dw_row, dyr, x);
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
