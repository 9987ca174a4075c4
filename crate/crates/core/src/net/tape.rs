//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints.

use super::conv::{conv3d, conv3d_backward, upsample2, upsample2_backward, ConvSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, spec: ConvSpec },
    ChannelBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Upsample2(Var),
    /// `W · vec(x)` for `W` of shape (rows, len(x)).
    MatVec { w: Var, x: Var },
    Concat(Vec<Var>),
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Npcc { x: Var, target: Tensor<T> },
    Mean(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints indexed by [`Var`]; `None` marks a node the loss does not reach.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

/// `(mean, centred values, norm of centred values)` of a slice.
fn centre<T: Scalar>(v: &[T]) -> (Vec<T>, T) {
    let n = T::lit(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let c: Vec<T> = v.iter().map(|&a| a - mean).collect();
    let norm = c.iter().map(|&a| a * a).sum::<T>().sqrt();
    (c, norm)
}

/// Negative Pearson correlation of two equally sized slices.
pub fn npcc_slices<T: Scalar>(target: &[T], x: &[T]) -> Result<T> {
    if target.len() != x.len() {
        return Err(Error::shape(&[target.len()], &[x.len()]));
    }
    let (ct, nt) = centre(target);
    let (cx, nx) = centre(x);
    if nt == T::zero() {
        return Err(Error::ZeroVariance("target"));
    }
    if nx == T::zero() {
        return Err(Error::ZeroVariance("reconstruction"));
    }
    let cov: T = ct.iter().zip(&cx).map(|(&a, &b)| a * b).sum();
    Ok(-cov / (nt * nx))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let y = conv3d(self.value(x), self.value(w), &spec)?;
        Ok(self.push(y, Op::Conv { x, w, spec }))
    }

    /// Adds `b[c]` to every voxel of channel `c`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bias = self.value(b);
        bias.check_shape(&[xs[0]])?;
        let per = xs[1..].iter().product::<usize>();
        let mut y = self.value(x).clone();
        for (c, chunk) in y.data_mut().chunks_mut(per).enumerate() {
            let bc = bias.data()[c];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        Ok(self.push(y, Op::ChannelBias { x, b }))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| T::one() - v);
        self.push(y, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.tanh());
        self.push(y, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu(a))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        if self.value(a).shape().len() != 4 {
            return Err(Error::InvalidParameter("upsample2 expects (C, Z, X, Y)".into()));
        }
        let y = upsample2(self.value(a));
        Ok(self.push(y, Op::Upsample2(a)))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.value(w).shape().to_vec();
        let n = self.value(x).len();
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::shape(&[ws.first().copied().unwrap_or(0), n], &ws));
        }
        let mut y = Tensor::zeros(&[ws[0]]);
        T::gemm(ws[0], n, 1, T::one(), self.value(w).data(), false, self.value(x).data(), false, T::zero(), y.data_mut());
        Ok(self.push(y, Op::MatVec { w, x }))
    }

    /// Concatenates flattened inputs into one vector.
    pub fn concat(&mut self, items: &[Var]) -> Var {
        let data: Vec<T> = items
            .iter()
            .flat_map(|&v| self.value(v).data().iter().copied())
            .collect();
        let n = data.len();
        let y = Tensor::from_vec(&[n], data).expect("length matches");
        self.push(y, Op::Concat(items.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let max = v.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
        let s: T = e.iter().copied().sum();
        let y = Tensor::from_vec(&[e.len()], e.into_iter().map(|x| x / s).collect()).expect("length");
        self.push(y, Op::Softmax(a))
    }

    /// `Σ_m weights[m] · items[m]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "weighted sum of {} items with {} weights",
                items.len(),
                w.len()
            )));
        }
        let shape = self.value(items[0]).shape().to_vec();
        let mut y = Tensor::zeros(&shape);
        for (m, &it) in items.iter().enumerate() {
            self.value(it).check_shape(&shape)?;
            y.scaled_add(w.data()[m], self.value(it));
        }
        Ok(self.push(y, Op::WeightedSum { weights, items: items.to_vec() }))
    }

    /// Negative Pearson correlation against a fixed target, over all voxels.
    pub fn npcc(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != target.len() {
            return Err(Error::shape(target.shape(), xv.shape()));
        }
        let v = npcc_slices(target.data(), xv.data())?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Npcc {
                x,
                target: target.clone(),
            },
        ))
    }

    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::InvalidParameter("mean of nothing".into()));
        }
        let shape = self.value(items[0]).shape().to_vec();
        let mut y = Tensor::zeros(&shape);
        for &it in items {
            self.value(it).check_shape(&shape)?;
            y.add_assign(self.value(it));
        }
        y.scale(T::one() / T::lit(items.len() as f64));
        Ok(self.push(y, Op::Mean(items.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidParameter("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::Conv { x, w, spec } => {
                    let (gx, gw) = conv3d_backward(self.value(*x), self.value(*w), spec, &gy, true)?;
                    if let Some(gx) = gx {
                        acc(&mut grads, *x, gx);
                    }
                    acc(&mut grads, *w, gw);
                }
                Op::ChannelBias { x, b } => {
                    let c = self.value(*b).len();
                    let per = gy.len() / c;
                    let gb: Vec<T> = gy.data().chunks(per).map(|ch| ch.iter().copied().sum()).collect();
                    acc(&mut grads, *b, Tensor::from_vec(&[c], gb)?);
                    acc(&mut grads, *x, gy);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, gy.map(|v| -v));
                    acc(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let ga = gy.zip_map(self.value(*b), |g, q| g * q);
                    let gb = gy.zip_map(self.value(*a), |g, p| g * p);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::OneMinus(a) => acc(&mut grads, *a, gy.map(|v| -v)),
                Op::Sigmoid(a) => {
                    let g = gy.zip_map(&node.value, |g, y| g * y * (T::one() - y));
                    acc(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let g = gy.zip_map(&node.value, |g, y| g * (T::one() - y * y));
                    acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let g = gy.zip_map(&node.value, |g, y| if y > T::zero() { g } else { T::zero() });
                    acc(&mut grads, *a, g);
                }
                Op::Upsample2(a) => acc(&mut grads, *a, upsample2_backward(&gy)),
                Op::MatVec { w, x } => {
                    let ws = self.value(*w).shape();
                    let (rows, cols) = (ws[0], ws[1]);
                    // dW = gy ⊗ x, dx = Wᵀ gy
                    let mut gw = Tensor::zeros(ws);
                    T::gemm(rows, 1, cols, T::one(), gy.data(), false, self.value(*x).data(), false, T::zero(), gw.data_mut());
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    T::gemm(cols, rows, 1, T::one(), self.value(*w).data(), true, gy.data(), false, T::zero(), gx.data_mut());
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(items) => {
                    let mut off = 0;
                    for &it in items {
                        let shape = self.value(it).shape().to_vec();
                        let n = self.value(it).len();
                        let g = Tensor::from_vec(&shape, gy.data()[off..off + n].to_vec())?;
                        off += n;
                        acc(&mut grads, it, g);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot = y.dot(&gy);
                    let g = gy.zip_map(y, |g, s| s * (g - dot));
                    acc(&mut grads, *a, g);
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights).data().to_vec();
                    let gw: Vec<T> = items.iter().map(|&it| self.value(it).dot(&gy)).collect();
                    for (m, &it) in items.iter().enumerate() {
                        let mut g = gy.clone();
                        g.scale(w[m]);
                        acc(&mut grads, it, g);
                    }
                    acc(&mut grads, *weights, Tensor::from_vec(&[w.len()], gw)?);
                }
                Op::Npcc { x, target } => {
                    let g = gy.item();
                    let xv = self.value(*x);
                    let (ct, nt) = centre(target.data());
                    let (cx, nx) = centre(xv.data());
                    let rho = -node.value.item();
                    // ∂(-ρ)/∂x_i = -(ct_i/(nt·nx) - ρ·cx_i/nx²)
                    let data = ct
                        .iter()
                        .zip(&cx)
                        .map(|(&a, &b)| -g * (a / (nt * nx) - rho * b / (nx * nx)))
                        .collect();
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), data)?);
                }
                Op::Mean(items) => {
                    let mut g = gy;
                    g.scale(T::one() / T::lit(items.len() as f64));
                    for &it in items {
                        acc(&mut grads, it, g.clone());
                    }
                }
            }
        }
        Ok(Grads { grads })
    }
}
