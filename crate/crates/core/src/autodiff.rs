//! Define-by-run reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! a same-shape gradient accumulator and the rule that pushes gradient back
//! to its operands. [`Graph::backward`] walks the tape in exact reverse
//! creation order, so accumulation order (and therefore every gradient bit)
//! is deterministic.
//!
//! Broadcasting is limited to rank-0 scalars against arrays. Everything else
//! must match shapes exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds for axis of length {bound}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: axis {axis} is invalid for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("tensor data of length {len} does not fit shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward needs a single-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense row-major array. A rank-0 shape (`[]`) is a scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
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

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }
}

/// Handle to a node in a [`Graph`].
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
    Neg(Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sum(Var),
    SumAxis(Var, usize),
    LogSigmoid(Var),
    Tanh(Var),
    LogSoftmax(Var, usize),
    Gather(Var, Vec<usize>),
    Slice(Var, usize),
    MatMul(Var, Var),
    EmbedLookup(Var, Vec<usize>),
    Reshape(Var),
    AddBias(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of nodes for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Numerically stable `log(1 + exp(z))`.
pub fn softplus(z: f64) -> f64 {
    if z <= 0.0 {
        z.exp().ln_1p()
    } else {
        z + (-z).exp().ln_1p()
    }
}

/// `log σ(x) = -softplus(-x)`, finite for all finite `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp of a slice; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(AutodiffError::ShapeMismatch {
            op,
            left: other.to_vec(),
            right: vec![0, 0],
        }),
    }
}

/// Split a shape around `axis` into (outer, axis length, inner) strides.
fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(AutodiffError::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient. Nodes that do not require gradients carry an
    /// empty buffer.
    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let grad = if requires_grad {
            Tensor::zeros(value.shape())
        } else {
            Tensor {
                shape: value.shape.clone(),
                data: Vec::new(),
            }
        };
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = if va.shape() == vb.shape() {
            va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect()
        } else if va.is_scalar() {
            let x = va.data[0];
            vb.data.iter().map(|y| f(x, *y)).collect()
        } else if vb.is_scalar() {
            let y = vb.data[0];
            va.data.iter().map(|x| f(*x, y)).collect()
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: va.shape.clone(),
                right: vb.shape.clone(),
            });
        };
        let shape = if va.is_scalar() { vb.shape.clone() } else { va.shape.clone() };
        Ok(Tensor { shape, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| -x).collect(),
        };
        let rg = self.needs(&[a]);
        self.push(value, Op::Neg(a), rg)
    }

    /// Multiply by a constant scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x * c).collect(),
        };
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let v = self.value(a);
        if v.len() != weights.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                left: v.shape.clone(),
                right: vec![weights.len()],
            });
        }
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().zip(weights).map(|(x, w)| x * w).collect(),
        };
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::MulConst(a, weights.to_vec()), rg))
    }

    /// Sum of all elements; an empty array sums to 0.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sum along `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let (outer, n, inner) = axis_split("sum_axis", v.shape(), axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += v.data[(o * n + k) * inner + i];
                }
            }
        }
        let mut shape = v.shape.clone();
        shape.remove(axis);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::SumAxis(a, axis), rg))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| log_sigmoid(*x)).collect(),
        };
        let rg = self.needs(&[a]);
        self.push(value, Op::LogSigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x.tanh()).collect(),
        };
        let rg = self.needs(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Max-shifted log-softmax along `axis`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let (outer, n, inner) = axis_split("log_softmax", v.shape(), axis)?;
        let mut data = v.data.clone();
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for k in 0..n {
                    lane[k] = v.data[(o * n + k) * inner + i];
                }
                let lse = log_sum_exp(&lane);
                for k in 0..n {
                    data[(o * n + k) * inner + i] = lane[k] - lse;
                }
            }
        }
        let value = Tensor {
            shape: v.shape.clone(),
            data,
        };
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a, axis), rg))
    }

    /// Select along the last axis.
    ///
    /// For a vector `[n]`, returns `[indices.len()]` with `out[j] = a[indices[j]]`.
    /// For a matrix `[r, c]`, `indices` holds one column per row and the result is `[r]`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let data = match v.shape() {
            [n] => {
                let mut out = Vec::with_capacity(indices.len());
                for &ix in indices {
                    if ix >= *n {
                        return Err(AutodiffError::IndexOutOfBounds {
                            op: "gather",
                            index: ix,
                            bound: *n,
                        });
                    }
                    out.push(v.data[ix]);
                }
                out
            }
            [r, c] => {
                if indices.len() != *r {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "gather",
                        left: v.shape.clone(),
                        right: vec![indices.len()],
                    });
                }
                let mut out = Vec::with_capacity(*r);
                for (row, &ix) in indices.iter().enumerate() {
                    if ix >= *c {
                        return Err(AutodiffError::IndexOutOfBounds {
                            op: "gather",
                            index: ix,
                            bound: *c,
                        });
                    }
                    out.push(v.data[row * c + ix]);
                }
                out
            }
            other => {
                return Err(AutodiffError::InvalidAxis {
                    op: "gather",
                    axis: other.len().saturating_sub(1),
                    shape: other.to_vec(),
                })
            }
        };
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::vector(data), Op::Gather(a, indices.to_vec()), rg))
    }

    /// Contiguous sub-vector `a[start..end]` of a rank-1 array.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let n = match v.shape() {
            [n] => *n,
            other => {
                return Err(AutodiffError::InvalidAxis {
                    op: "slice",
                    axis: 0,
                    shape: other.to_vec(),
                })
            }
        };
        if start > end || end > n {
            return Err(AutodiffError::IndexOutOfBounds {
                op: "slice",
                index: end.max(start),
                bound: n,
            });
        }
        let value = Tensor::vector(v.data[start..end].to_vec());
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Slice(a, start), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", va)?;
        let (k2, n) = matrix_dims("matmul", vb)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: va.shape.clone(),
                right: vb.shape.clone(),
            });
        }
        let mut data = vec![0.0; m * n];
        matmul_into(&va.data, &vb.data, &mut data, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    /// Rows of a `[vocab, dim]` table, one per index, as `[indices.len(), dim]`.
    pub fn embed_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, dim) = matrix_dims("embed_lookup", t)?;
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &ix in indices {
            if ix >= rows {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "embed_lookup",
                    index: ix,
                    bound: rows,
                });
            }
            data.extend_from_slice(&t.data[ix * dim..(ix + 1) * dim]);
        }
        let value = Tensor::new(vec![indices.len(), dim], data)?;
        let rg = self.needs(&[table]);
        Ok(self.push(value, Op::EmbedLookup(table, indices.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let value = Tensor::new(shape.to_vec(), v.data.clone())?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// `x[r, c] + bias[c]` for every row `r`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (r, c) = matrix_dims("add_bias", vx)?;
        if vb.shape() != [c] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                left: vx.shape.clone(),
                right: vb.shape.clone(),
            });
        }
        let mut data = vx.data.clone();
        for row in 0..r {
            for col in 0..c {
                data[row * c + col] += vb.data[col];
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::AddBias(x, bias), rg))
    }

    /// Accumulate `d output / d node` into every node's gradient.
    ///
    /// The output's gradient is seeded with 1. Repeated calls accumulate.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarOutput(
                self.nodes[output.0].value.shape.clone(),
            ));
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        self.nodes[output.0].grad.data[0] += 1.0;
        for ix in (0..=output.0).rev() {
            if !self.nodes[ix].requires_grad {
                continue;
            }
            // Move the op and upstream gradient out while propagating so the
            // node can be borrowed by `propagate`; both go back afterwards.
            let op = std::mem::replace(&mut self.nodes[ix].op, Op::Leaf);
            let upstream = std::mem::take(&mut self.nodes[ix].grad.data);
            self.propagate(ix, &op, &upstream);
            self.nodes[ix].op = op;
            self.nodes[ix].grad.data = upstream;
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, contribution: impl IntoIterator<Item = f64>) {
        let node = &mut self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        if node.grad.len() == 1 && node.value.is_scalar() {
            node.grad.data[0] += contribution.into_iter().sum::<f64>();
        } else {
            for (g, c) in node.grad.data.iter_mut().zip(contribution) {
                *g += c;
            }
        }
    }

    /// Upstream gradient reduced onto an operand that may have been broadcast.
    fn accumulate_broadcast(&mut self, target: Var, out_len: usize, contribution: Vec<f64>) {
        let is_broadcast_scalar = self.nodes[target.0].value.is_scalar() && out_len != 1;
        if is_broadcast_scalar {
            let s: f64 = contribution.iter().sum();
            self.accumulate(target, [s]);
        } else {
            self.accumulate(target, contribution);
        }
    }

    fn broadcast_value(&self, v: Var, n: usize) -> Vec<f64> {
        let t = &self.nodes[v.0].value;
        if t.is_scalar() && n != 1 {
            vec![t.data[0]; n]
        } else {
            t.data.clone()
        }
    }

    fn propagate(&mut self, ix: usize, op: &Op, g: &[f64]) {
        let n = g.len();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(a, n, g.to_vec());
                self.accumulate_broadcast(b, n, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(a, n, g.to_vec());
                self.accumulate_broadcast(b, n, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let va = self.broadcast_value(a, n);
                let vb = self.broadcast_value(b, n);
                let ga = g.iter().zip(&vb).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(&va).map(|(g, x)| g * x).collect();
                self.accumulate_broadcast(a, n, ga);
                self.accumulate_broadcast(b, n, gb);
            }
            Op::Neg(a) => self.accumulate(a, g.iter().map(|x| -x).collect::<Vec<_>>()),
            Op::Scale(a, c) => self.accumulate(a, g.iter().map(|x| x * c).collect::<Vec<_>>()),
            Op::MulConst(a, ref w) => {
                self.accumulate(a, g.iter().zip(w).map(|(g, w)| g * w).collect::<Vec<_>>())
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                self.accumulate(a, vec![g[0]; len]);
            }
            Op::SumAxis(a, axis) => {
                let shape = self.nodes[a.0].value.shape.clone();
                let (outer, k, inner) = axis_split("sum_axis", &shape, axis).expect("checked in forward");
                let mut contrib = vec![0.0; outer * k * inner];
                for o in 0..outer {
                    for j in 0..k {
                        for i in 0..inner {
                            contrib[(o * k + j) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                self.accumulate(a, contrib);
            }
            Op::LogSigmoid(a) => {
                let contrib: Vec<f64> = self.nodes[a.0]
                    .value
                    .data
                    .iter()
                    .zip(g)
                    .map(|(x, g)| g * sigmoid(-x))
                    .collect();
                self.accumulate(a, contrib);
            }
            Op::Tanh(a) => {
                let contrib: Vec<f64> = self.nodes[ix]
                    .value
                    .data
                    .iter()
                    .zip(g)
                    .map(|(y, g)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(a, contrib);
            }
            Op::LogSoftmax(a, axis) => {
                let y = &self.nodes[ix].value;
                let (outer, k, inner) = axis_split("log_softmax", y.shape(), axis).expect("checked in forward");
                let mut contrib = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * k + j) * inner + i;
                        let gsum: f64 = (0..k).map(|j| g[at(j)]).sum();
                        for j in 0..k {
                            contrib[at(j)] = g[at(j)] - y.data[at(j)].exp() * gsum;
                        }
                    }
                }
                self.accumulate(a, contrib);
            }
            Op::Gather(a, ref indices) => {
                let shape = self.nodes[a.0].value.shape.clone();
                let mut contrib = vec![0.0; shape.iter().product()];
                match shape.as_slice() {
                    [_] => {
                        for (j, &col) in indices.iter().enumerate() {
                            contrib[col] += g[j];
                        }
                    }
                    [_, c] => {
                        for (row, &col) in indices.iter().enumerate() {
                            contrib[row * c + col] += g[row];
                        }
                    }
                    _ => unreachable!("gather validated rank in forward"),
                }
                self.accumulate(a, contrib);
            }
            Op::Slice(a, start) => {
                let len = self.nodes[a.0].value.len();
                let mut contrib = vec![0.0; len];
                contrib[start..start + n].copy_from_slice(g);
                self.accumulate(a, contrib);
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let nn = self.nodes[b.0].value.shape()[1];
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let vb = &self.nodes[b.0].value.data;
                    let mut ga = vec![0.0; m * k];
                    for (grow, garow) in g.chunks_exact(nn).zip(ga.chunks_exact_mut(k)) {
                        for (gp, brow) in garow.iter_mut().zip(vb.chunks_exact(nn)) {
                            *gp = grow.iter().zip(brow).fold(0.0, |acc, (x, y)| acc + x * y);
                        }
                    }
                    self.accumulate(a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let va = &self.nodes[a.0].value.data;
                    let mut gb = vec![0.0; k * nn];
                    for (arow, grow) in va.chunks_exact(k).zip(g.chunks_exact(nn)) {
                        for (&aip, gbrow) in arow.iter().zip(gb.chunks_exact_mut(nn)) {
                            for (o, x) in gbrow.iter_mut().zip(grow) {
                                *o += aip * x;
                            }
                        }
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::EmbedLookup(table, ref indices) => {
                let shape = self.nodes[table.0].value.shape.clone();
                let dim = shape[1];
                let mut contrib = vec![0.0; shape[0] * dim];
                for (row, &ix) in indices.iter().enumerate() {
                    for d in 0..dim {
                        contrib[ix * dim + d] += g[row * dim + d];
                    }
                }
                self.accumulate(table, contrib);
            }
            Op::Reshape(a) => self.accumulate(a, g.to_vec()),
            Op::AddBias(x, bias) => {
                self.accumulate(x, g.to_vec());
                let c = self.nodes[bias.0].value.len();
                let mut gb = vec![0.0; c];
                for (i, gi) in g.iter().enumerate() {
                    gb[i % c] += gi;
                }
                self.accumulate(bias, gb);
            }
        }
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Check the gradient of a scalar-valued graph builder against
/// `(f(θ + h e_i) − f(θ − h e_i)) / 2h` for every coordinate of every parameter.
///
/// Relative error per coordinate uses `max(|analytic|, |numeric|, 1e-8)` as
/// the denominator.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(AutodiffError::InvalidStep(h));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| g.grad(*v).data.clone()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        tol,
        passed: true,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ei in 0..param.len() {
            let orig = param.data[ei];
            work[pi].data[ei] = orig + h;
            let plus = eval(&work)?;
            work[pi].data[ei] = orig - h;
            let minus = eval(&work)?;
            work[pi].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((pi, ei));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
