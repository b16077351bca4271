//! Dense row-major `f64` tensors and the small set of kernels the fusion
//! pipeline needs.
//!
//! Tensors own their storage; there are no views or strides. Every
//! operation returns a fresh tensor and leaves its inputs untouched.

mod conv;
mod dct;
pub mod io;

use std::fmt;

pub use conv::{conv2d, depthwise_conv2d};
pub(crate) use conv::conv2d_backward;
pub use dct::{dct2, dct_matrix, idct2};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Observer notified of every matrix product with its `(m, k, n)` sizes.
pub trait MatmulHook {
    fn on_matmul(&mut self, m: usize, k: usize, n: usize);
}

/// Hook that ignores every call.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl MatmulHook for NoHook {
    fn on_matmul(&mut self, _m: usize, _k: usize, _n: usize) {}
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Gaussian entries with standard deviation `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| std * rng.gaussian()).collect(),
        }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect(),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "expected a single element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element-wise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "expected a C×H×W tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "expected a matrix, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn add_scalar(&self, value: f64) -> Self {
        self.map(|v| v + value)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        self.matmul_with(other, &mut NoHook)
    }

    /// Matrix product that reports its `(m, k, n)` to `hook` before computing.
    pub fn matmul_with(&self, other: &Tensor, hook: &mut dyn MatmulHook) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions {k} and {k2} disagree"
            )));
        }
        hook.on_matmul(m, k, n);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                let src = &other.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn gelu(&self) -> Self {
        self.map(gelu)
    }

    /// Softmax along the last axis of a matrix.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(c).take(r) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Row-wise log-softmax. The log-sum-exp is split as
    /// `max + ln_1p(Σ_{k≠argmax} exp(z_k − max))` so that a dominant logit
    /// keeps its tiny loss instead of rounding to zero.
    pub fn log_softmax_rows(&self) -> Result<Self> {
        let (_, c) = self.dims2()?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            let (max, tail) = log_sum_exp_parts(row);
            for v in row.iter_mut() {
                *v = (*v - max) - tail;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Per-channel spatial mean of a `C×H×W` tensor.
    pub fn global_avg_pool(&self) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        let plane = h * w;
        Ok(Self {
            shape: vec![c],
            data: self
                .data
                .chunks(plane)
                .map(|ch| ch.iter().sum::<f64>() / plane as f64)
                .collect(),
        })
    }

    /// Concatenate `C_i×H×W` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("concat_channels: no inputs"))?;
        let (_, h, w) = first.dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(format!(
                    "concat_channels: spatial size {ph}×{pw} differs from {h}×{w}"
                )));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![channels, h, w],
            data,
        })
    }

    /// Multiply every channel of a `C×H×W` tensor by the same `H×W` map.
    pub fn mul_spatial(&self, map: &Tensor) -> Result<Self> {
        let (_, h, w) = self.dims3()?;
        if map.len() != h * w {
            return Err(Error::shape(format!(
                "mul_spatial: map of {} elements for a {h}×{w} field",
                map.len()
            )));
        }
        let mut out = self.data.clone();
        for ch in out.chunks_mut(h * w) {
            for (v, m) in ch.iter_mut().zip(&map.data) {
                *v *= m;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Multiply channel `c` of a `C×H×W` tensor by `gains[c]`.
    pub fn mul_channel(&self, gains: &Tensor) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        if gains.len() != c {
            return Err(Error::shape(format!(
                "mul_channel: {} gains for {c} channels",
                gains.len()
            )));
        }
        let mut out = self.data.clone();
        for (ch, g) in out.chunks_mut(h * w).zip(&gains.data) {
            for v in ch.iter_mut() {
                *v *= g;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Column-wise maximum of a matrix, returning the values and the row
    /// index each was taken from.
    pub fn max_rows(&self) -> Result<(Self, Vec<usize>)> {
        let (r, c) = self.dims2()?;
        if r == 0 {
            return Err(Error::shape("max_rows: matrix has no rows"));
        }
        let mut vals = self.data[..c].to_vec();
        let mut arg = vec![0; c];
        for i in 1..r {
            for j in 0..c {
                let v = self.data[i * c + j];
                if v > vals[j] {
                    vals[j] = v;
                    arg[j] = i;
                }
            }
        }
        Ok((
            Self {
                shape: vec![c],
                data: vals,
            },
            arg,
        ))
    }

    /// Column-wise mean of a matrix.
    pub fn mean_rows(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if r == 0 {
            return Err(Error::shape("mean_rows: matrix has no rows"));
        }
        let mut acc = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        Ok(Self {
            shape: vec![c],
            data: acc.into_iter().map(|v| v / r as f64).collect(),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `(max, ln_1p(Σ_{k≠argmax} exp(z_k − max)))`; their sum is the
/// log-sum-exp of `row`.
pub(crate) fn log_sum_exp_parts(row: &[f64]) -> (f64, f64) {
    let (arg, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max, rest.ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(&[2, 1], vec![5., 6.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17., 39.]);
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        assert_eq!(Tensor::eye(3).matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(2);
        let a = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let d = a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)).unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn hook_sees_sizes() {
        struct Rec(Vec<(usize, usize, usize)>);
        impl MatmulHook for Rec {
            fn on_matmul(&mut self, m: usize, k: usize, n: usize) {
                self.0.push((m, k, n));
            }
        }
        let mut rec = Rec(vec![]);
        Tensor::zeros(&[2, 3])
            .matmul_with(&Tensor::zeros(&[3, 4]), &mut rec)
            .unwrap();
        assert_eq!(rec.0, vec![(2, 3, 4)]);
    }

    #[test]
    fn sigmoid_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softmax_constant_row() {
        let t = Tensor::full(&[1, 4], 3.7);
        assert_eq!(t.softmax_rows().unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn log_softmax_keeps_tiny_tail() {
        let t = Tensor::new(&[1, 2], vec![20.0, -20.0]).unwrap();
        let l = t.log_softmax_rows().unwrap();
        let expected = (-40.0f64).exp().ln_1p();
        assert!((-l.data()[0] - expected).abs() < 1e-30);
    }

    #[test]
    fn global_pool_mean() {
        let t = Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(t.global_avg_pool().unwrap().data(), &[2.5]);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn max_rows_tracks_argmax() {
        let t = Tensor::new(&[2, 3], vec![1., 5., 3., 4., 2., 3.]).unwrap();
        let (v, a) = t.max_rows().unwrap();
        assert_eq!(v.data(), &[4., 5., 3.]);
        assert_eq!(a, vec![1, 0, 0]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // Φ(1) = 0.841344746068543
        assert!((gelu(1.0) - 0.841344746068543).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matmul_is_associative(seed in any::<u64>()) {
                let mut rng = crate::rng::Rng::new(seed);
                let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
                let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
                let c = Tensor::randn(&[2, 5], 1.0, &mut rng);
                let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
                let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
                prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
            }

            #[test]
            fn softmax_rows_sum_to_one(seed in any::<u64>()) {
                let mut rng = crate::rng::Rng::new(seed);
                let t = Tensor::randn(&[3, 7], 5.0, &mut rng).softmax_rows().unwrap();
                for row in t.data().chunks(7) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
