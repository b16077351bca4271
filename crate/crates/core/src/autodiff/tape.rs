//! Tape-based reverse-mode differentiation over [`Tensor`] operations.
//!
//! Every operation appends a node holding its forward value, so nodes are
//! always in topological order. [`Tape::backward`] walks the tape once in
//! reverse and accumulates vector–Jacobian products.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, dct2, depthwise_conv2d, idct2, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Conv2d { x: Var, k: Var, pad: usize, depthwise: bool },
    Dct2(Var),
    Idct2(Var),
    GlobalAvgPool(Var),
    ConcatChannels(Vec<Var>),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var),
    MulSpatial(Var, Var),
    MulChannel(Var, Var),
    Sum(Var),
    Mean(Var),
    RowNormalize(Var),
    Gather(Var, Vec<(usize, usize)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(name.into());
        v
    }

    /// Leaf that is not a parameter (inputs, fixed weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).scale(factor);
        self.push(y, Op::Scale(x, factor))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).add_scalar(c);
        self.push(y, Op::AddConst(x))
    }

    /// `1 − x`, computed as `(−x) + 1`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_const(neg, 1.0)
    }

    /// `x · s` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let y = self.value(x).scale(sv);
        Ok(self.push(y, Op::MulScalar(x, s)))
    }

    /// `x / s` for a one-element `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let y = self.value(x).map(|v| v / sv);
        Ok(self.push(y, Op::DivScalar(x, s)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).transpose()?;
        Ok(self.push(y, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).sigmoid();
        self.push(y, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).relu();
        self.push(y, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).softmax_rows()?;
        Ok(self.push(y, Op::SoftmaxRows(x)))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).log_softmax_rows()?;
        Ok(self.push(y, Op::LogSoftmaxRows(x)))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, pad: usize) -> Result<Var> {
        let y = conv2d(self.value(x), self.value(k), pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                k,
                pad,
                depthwise: false,
            },
        ))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, pad: usize) -> Result<Var> {
        let y = depthwise_conv2d(self.value(x), self.value(k), pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                k,
                pad,
                depthwise: true,
            },
        ))
    }

    pub fn dct2(&mut self, x: Var) -> Result<Var> {
        let y = dct2(self.value(x))?;
        Ok(self.push(y, Op::Dct2(x)))
    }

    pub fn idct2(&mut self, x: Var) -> Result<Var> {
        let y = idct2(self.value(x))?;
        Ok(self.push(y, Op::Idct2(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).global_avg_pool()?;
        Ok(self.push(y, Op::GlobalAvgPool(x)))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat_channels(&refs)?;
        Ok(self.push(y, Op::ConcatChannels(parts.to_vec())))
    }

    /// Column-wise maximum over the rows of a matrix.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (y, arg) = self.value(x).max_rows()?;
        Ok(self.push(y, Op::MaxRows(x, arg)))
    }

    /// Column-wise mean over the rows of a matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).mean_rows()?;
        Ok(self.push(y, Op::MeanRows(x)))
    }

    /// `C×H×W` input times an `H×W` map broadcast over channels.
    pub fn mul_spatial(&mut self, x: Var, map: Var) -> Result<Var> {
        let y = self.value(x).mul_spatial(self.value(map))?;
        Ok(self.push(y, Op::MulSpatial(x, map)))
    }

    /// `C×H×W` input times a length-`C` gain vector broadcast over space.
    pub fn mul_channel(&mut self, x: Var, gains: Var) -> Result<Var> {
        let y = self.value(x).mul_channel(self.value(gains))?;
        Ok(self.push(y, Op::MulChannel(x, gains)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.push(y, Op::Mean(x))
    }

    /// Scale each matrix row to unit Euclidean norm. A zero row is an
    /// error naming its index.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (_, c) = t.dims2()?;
        let mut out = t.data().to_vec();
        for (i, row) in out.chunks_mut(c).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Degenerate(format!("row {i} has norm {norm}")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let y = Tensor::new(t.shape(), out)?;
        Ok(self.push(y, Op::RowNormalize(x)))
    }

    /// Pick `x[i][j]` for each `(i, j)` into a vector.
    pub fn gather(&mut self, x: Var, index: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let mut vals = Vec::with_capacity(index.len());
        for &(i, j) in index {
            if i >= r || j >= c {
                return Err(Error::param(format!(
                    "gather index ({i}, {j}) outside {r}×{c}"
                )));
            }
            vals.push(t.data()[i * c + j]);
        }
        let y = Tensor::new(&[index.len()], vals)?;
        Ok(self.push(y, Op::Gather(x, index.to_vec())))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &up, &mut grads)?;
            grads[idx] = Some(up);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.clone().map(|name| (name, Var(i))))
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn propagate(
        &self,
        op: &Op,
        y: &Tensor,
        up: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, up.clone())?;
                accumulate(grads, *b, up.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, up.clone())?;
                accumulate(grads, *b, up.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, up.mul(val(b))?)?;
                accumulate(grads, *b, up.mul(val(a))?)?;
            }
            Op::Scale(x, f) => accumulate(grads, *x, up.scale(*f))?,
            Op::AddConst(x) | Op::Reshape(x) => {
                accumulate(grads, *x, up.reshape(val(x).shape())?)?
            }
            Op::MulScalar(x, s) => {
                let sv = val(s).item()?;
                accumulate(grads, *x, up.scale(sv))?;
                let gs = up.mul(val(x))?.sum();
                accumulate(grads, *s, Tensor::new(val(s).shape(), vec![gs])?)?;
            }
            Op::DivScalar(x, s) => {
                let sv = val(s).item()?;
                accumulate(grads, *x, up.map(|u| u / sv))?;
                let gs = -up.mul(val(x))?.sum() / (sv * sv);
                accumulate(grads, *s, Tensor::new(val(s).shape(), vec![gs])?)?;
            }
            Op::MatMul(a, b) => {
                accumulate(grads, *a, up.matmul(&val(b).transpose()?)?)?;
                accumulate(grads, *b, val(a).transpose()?.matmul(up)?)?;
            }
            Op::Transpose(x) => accumulate(grads, *x, up.transpose()?)?,
            Op::Sigmoid(x) => {
                let local = y.map(|s| s * (1.0 - s));
                accumulate(grads, *x, up.mul(&local)?)?;
            }
            Op::Relu(x) => {
                let mask = val(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                accumulate(grads, *x, up.mul(&mask)?)?;
            }
            Op::SoftmaxRows(x) => {
                let (_, c) = y.dims2()?;
                let mut g = up.data().to_vec();
                for (grow, yrow) in g.chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(u, s)| u * s).sum();
                    for (gv, s) in grow.iter_mut().zip(yrow) {
                        *gv = s * (*gv - dot);
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape(), g)?)?;
            }
            Op::LogSoftmaxRows(x) => {
                let (_, c) = y.dims2()?;
                let mut g = up.data().to_vec();
                for (grow, yrow) in g.chunks_mut(c).zip(y.data().chunks(c)) {
                    let total: f64 = grow.iter().sum();
                    for (gv, ly) in grow.iter_mut().zip(yrow) {
                        *gv -= ly.exp() * total;
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape(), g)?)?;
            }
            Op::Conv2d {
                x,
                k,
                pad,
                depthwise,
            } => {
                let (gx, gk) = conv2d_backward(val(x), val(k), *pad, up, *depthwise)?;
                accumulate(grads, *x, gx)?;
                accumulate(grads, *k, gk)?;
            }
            // The orthonormal pair are each other's transpose.
            Op::Dct2(x) => accumulate(grads, *x, idct2(up)?)?,
            Op::Idct2(x) => accumulate(grads, *x, dct2(up)?)?,
            Op::GlobalAvgPool(x) => {
                let (c, h, w) = val(x).dims3()?;
                let plane = (h * w) as f64;
                let g = Tensor::from_fn(&[c, h, w], |i| up.data()[i / (h * w)] / plane);
                accumulate(grads, *x, g)?;
            }
            Op::ConcatChannels(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).len();
                    let g = Tensor::new(val(p).shape(), up.data()[offset..offset + n].to_vec())?;
                    accumulate(grads, *p, g)?;
                    offset += n;
                }
            }
            Op::MaxRows(x, arg) => {
                let (_, c) = val(x).dims2()?;
                let mut g = Tensor::zeros(val(x).shape());
                for (j, &i) in arg.iter().enumerate() {
                    g.data_mut()[i * c + j] = up.data()[j];
                }
                accumulate(grads, *x, g)?;
            }
            Op::MeanRows(x) => {
                let (r, c) = val(x).dims2()?;
                let g = Tensor::from_fn(&[r, c], |i| up.data()[i % c] / r as f64);
                accumulate(grads, *x, g)?;
            }
            Op::MulSpatial(x, m) => {
                accumulate(grads, *x, up.mul_spatial(val(m))?)?;
                let plane = val(m).len();
                let mut gm = vec![0.0; plane];
                for (uc, xc) in up.data().chunks(plane).zip(val(x).data().chunks(plane)) {
                    for ((g, u), xv) in gm.iter_mut().zip(uc).zip(xc) {
                        *g += u * xv;
                    }
                }
                accumulate(grads, *m, Tensor::new(val(m).shape(), gm)?)?;
            }
            Op::MulChannel(x, gains) => {
                accumulate(grads, *x, up.mul_channel(val(gains))?)?;
                let (_, h, w) = val(x).dims3()?;
                let gg: Vec<f64> = up
                    .data()
                    .chunks(h * w)
                    .zip(val(x).data().chunks(h * w))
                    .map(|(uc, xc)| uc.iter().zip(xc).map(|(u, v)| u * v).sum())
                    .collect();
                accumulate(grads, *gains, Tensor::new(val(gains).shape(), gg)?)?;
            }
            Op::Sum(x) => {
                accumulate(grads, *x, Tensor::full(val(x).shape(), up.data()[0]))?;
            }
            Op::Mean(x) => {
                let n = val(x).len() as f64;
                accumulate(grads, *x, Tensor::full(val(x).shape(), up.data()[0] / n))?;
            }
            Op::RowNormalize(x) => {
                let (_, c) = y.dims2()?;
                let mut g = up.data().to_vec();
                for ((grow, yrow), xrow) in g
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(val(x).data().chunks(c))
                {
                    let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = grow.iter().zip(yrow).map(|(u, v)| u * v).sum();
                    for (gv, yv) in grow.iter_mut().zip(yrow) {
                        *gv = (*gv - yv * dot) / norm;
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape(), g)?)?;
            }
            Op::Gather(x, index) => {
                let (_, c) = val(x).dims2()?;
                let mut g = Tensor::zeros(val(x).shape());
                for (&(i, j), u) in index.iter().zip(up.data()) {
                    g.data_mut()[i * c + j] += u;
                }
                accumulate(grads, *x, g)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => *acc = acc.add(&g)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Gradients of every named parameter, keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, v)| (name.clone(), self.wrt(*v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(&[2, 2], vec![1., -2., 3., 0.5]).unwrap());
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x), Tensor::ones(&[2, 2]));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::zeros(&[3]));
        let s = tape.sigmoid(x);
        let l = tape.sum(s);
        assert_eq!(tape.backward(l).unwrap().wrt(x).data(), &[0.25; 3]);
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::ones(&[2]));
        let y = tape.param("y", Tensor::ones(&[3]));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(y), Tensor::zeros(&[3]));
        assert_eq!(g.params().len(), 2);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        assert_eq!(tape.backward(l).unwrap().wrt(x).data(), &[6.0, -2.0]);
    }

    #[test]
    fn dct_gradient_is_inverse_transform() {
        use crate::rng::Rng;
        let mut rng = Rng::new(31);
        let x0 = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let w = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.param("x", x0);
        let wv = tape.constant(w.clone());
        let y = tape.dct2(x).unwrap();
        let yw = tape.mul(y, wv).unwrap();
        let l = tape.sum(yw);
        let g = tape.backward(l).unwrap().wrt(x);
        assert!(g.max_abs_diff(&idct2(&w).unwrap()).unwrap() < 1e-10);
    }
}
