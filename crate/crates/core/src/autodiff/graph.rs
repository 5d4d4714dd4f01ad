//! Append-only computation graph with reverse-mode differentiation.
//!
//! Two backward modes exist. `backward` walks the tape once and produces
//! plain gradient tensors. `grad_wrt_input` instead *emits the gradient
//! computation as new graph nodes*, so an input gradient (the quantity
//! inside a gradient-penalty norm) stays differentiable with respect to
//! any parameters it references; a later `backward` then carries exact
//! second-order effects into those parameters. ReLU's second derivative
//! is taken as zero almost everywhere, which the emitted mask nodes
//! encode by propagating nothing to their inputs.

use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

/// Guard applied inside `ln`: the forward value is ln(max(x, LN_CLAMP)).
pub const LN_CLAMP: f64 = 1e-7;

const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep the output strictly inside (0, 1) at the representability limit.
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    ReluMask(NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Square(NodeId),
    Sqrt(NodeId),
    Ln(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis0(NodeId),
    SumAxis1(NodeId),
    RepeatRows(NodeId, usize),
    BroadcastCol(NodeId, usize),
    BroadcastScalar(NodeId, Vec<usize>),
    Concat(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    PadCols(NodeId, usize, usize),
}

impl Op {
    fn parents(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf | Constant => [None, None],
            MatMul(a, b) | AddBias(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Concat(a, b) => {
                [Some(a), Some(b)]
            }
            Transpose(a) | Relu(a) | ReluMask(a) | Sigmoid(a) | Scale(a, _) | AddConst(a, _)
            | Square(a) | Sqrt(a) | Ln(a) | Sum(a) | Mean(a) | SumAxis0(a) | SumAxis1(a)
            | RepeatRows(a, _) | BroadcastCol(a, _) | SliceCols(a, _, _) | PadCols(a, _, _) => {
                [Some(a), None]
            }
            BroadcastScalar(a, _) => [Some(a), None],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Constant => "constant",
            MatMul(..) => "matmul",
            Transpose(..) => "transpose",
            AddBias(..) => "add_bias",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Relu(..) => "relu",
            ReluMask(..) => "relu_mask",
            Sigmoid(..) => "sigmoid",
            Scale(..) => "scale",
            AddConst(..) => "add_const",
            Square(..) => "square",
            Sqrt(..) => "sqrt",
            Ln(..) => "ln",
            Sum(..) => "sum",
            Mean(..) => "mean",
            SumAxis0(..) => "sum_axis0",
            SumAxis1(..) => "sum_axis1",
            RepeatRows(..) => "repeat_rows",
            BroadcastCol(..) => "broadcast_col",
            BroadcastScalar(..) => "broadcast_scalar",
            Concat(..) => "concat",
            SliceCols(..) => "slice_cols",
            PadCols(..) => "pad_cols",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Per-node gradient tensors produced by `backward`.
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Tensor>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.adj.get(id.0).and_then(|a| a.as_ref())
    }

    /// Gradient for `id`, or zeros of the given shape when the node was
    /// not reached by the backward sweep.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        self.nodes[id.0].value.as_scalar()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        value.check_finite(op.name())?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(id)
    }

    fn unary_requires(&self, a: NodeId) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn binary_requires(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    /// Differentiable input (parameters and anything gradients should
    /// reach).
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable input (data, masks, detached model outputs).
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (k2, n) = (vb.shape()[0], vb.shape()[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (data, _, _) = matmul(va.data(), m, k, false, vb.data(), k2, n, false)?;
        let req = self.binary_requires(a, b);
        self.push(Op::MatMul(a, b), Tensor::new_unchecked(vec![m, n], data), req)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "transpose expects rank-2, got {:?}",
                va.shape()
            )));
        }
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let src = va.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let req = self.unary_requires(a);
        self.push(Op::Transpose(a), Tensor::new_unchecked(vec![n, m], data), req)
    }

    /// Row-broadcast bias add: [m,n] + [n].
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        if vx.shape().len() != 2 || vb.shape().len() != 1 || vx.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, n) = (vx.shape()[0], vx.shape()[1]);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(vx.data()[i * n + j] + vb.data()[j]);
            }
        }
        let req = self.binary_requires(x, b);
        self.push(Op::AddBias(x, b), Tensor::new_unchecked(vec![m, n], data), req)
    }

    /// x·W + b in one call.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let z = self.matmul(x, w)?;
        self.add_bias(z, b)
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        opname: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let value = {
            let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            va.zip(vb, opname, f)?
        };
        let req = self.binary_requires(a, b);
        self.push(op, value, req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let value = self.nodes[a.0].value.map(f);
        let req = self.unary_requires(a);
        self.push(op, value, req)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// 0/1 indicator of positive input; contributes no gradient to its
    /// input (the ReLU-second-derivative-is-zero convention).
    pub fn relu_mask(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::ReluMask(a), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                op: "scale",
                context: format!("constant factor {c}"),
            });
        }
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                op: "add_const",
                context: format!("constant addend {c}"),
            });
        }
        self.unary(a, Op::AddConst(a, c), |x| x + c)
    }

    /// 1 - x.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let neg = self.scale(a, -1.0)?;
        self.add_const(neg, 1.0)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Guarded natural log: ln(max(x, LN_CLAMP)).
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Ln(a), |x| x.max(LN_CLAMP).ln())
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let req = self.unary_requires(a);
        self.push(Op::Sum(a), Tensor::new_unchecked(vec![], vec![s]), req)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.numel() == 0 {
            return Err(Error::EmptyInput("mean over empty tensor".into()));
        }
        let s: f64 = v.data().iter().sum::<f64>() / v.numel() as f64;
        let req = self.unary_requires(a);
        self.push(Op::Mean(a), Tensor::new_unchecked(vec![], vec![s]), req)
    }

    /// Column sums: [m,n] -> [n].
    pub fn sum_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "sum_axis0 expects rank-2, got {:?}",
                v.shape()
            )));
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += v.data()[i * n + j];
            }
        }
        let req = self.unary_requires(a);
        self.push(Op::SumAxis0(a), Tensor::new_unchecked(vec![n], out), req)
    }

    /// Row sums: [m,n] -> [m].
    pub fn sum_axis1(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "sum_axis1 expects rank-2, got {:?}",
                v.shape()
            )));
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = v.data()[i * n..(i + 1) * n].iter().sum();
        }
        let req = self.unary_requires(a);
        self.push(Op::SumAxis1(a), Tensor::new_unchecked(vec![m], out), req)
    }

    /// [n] -> [m,n], every row a copy.
    pub fn repeat_rows(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape().len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "repeat_rows expects rank-1, got {:?}",
                v.shape()
            )));
        }
        let n = v.shape()[0];
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(v.data());
        }
        let req = self.unary_requires(a);
        self.push(Op::RepeatRows(a, m), Tensor::new_unchecked(vec![m, n], data), req)
    }

    /// [m] -> [m,n], every column a copy.
    pub fn broadcast_col(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape().len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "broadcast_col expects rank-1, got {:?}",
                v.shape()
            )));
        }
        let m = v.shape()[0];
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for _ in 0..n {
                data.push(v.data()[i]);
            }
        }
        let req = self.unary_requires(a);
        self.push(Op::BroadcastCol(a, n), Tensor::new_unchecked(vec![m, n], data), req)
    }

    /// scalar -> arbitrary shape.
    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.nodes[a.0].value.as_scalar()?;
        let numel: usize = shape.iter().product();
        let req = self.unary_requires(a);
        self.push(
            Op::BroadcastScalar(a, shape.to_vec()),
            Tensor::new_unchecked(shape.to_vec(), vec![v; numel]),
            req,
        )
    }

    /// Concatenate along the feature axis: [m,p] ++ [m,q] -> [m,p+q].
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[0] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, p, q) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&va.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&vb.data()[i * q..(i + 1) * q]);
        }
        let req = self.binary_requires(a, b);
        self.push(
            Op::Concat(a, b),
            Tensor::new_unchecked(vec![m, p + q], data),
            req,
        )
    }

    /// Columns [start, start+len) of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape().len() != 2 || start + len > v.shape()[1] || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "slice_cols [{start}, {start}+{len}) out of bounds for shape {:?}",
                v.shape()
            )));
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&v.data()[i * n + start..i * n + start + len]);
        }
        let req = self.unary_requires(a);
        self.push(
            Op::SliceCols(a, start, len),
            Tensor::new_unchecked(vec![m, len], data),
            req,
        )
    }

    /// Embed a rank-2 tensor into a wider zero matrix at column `start`.
    pub fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape().len() != 2 || start + v.shape()[1] > total {
            return Err(Error::InvalidArgument(format!(
                "pad_cols start={start} total={total} incompatible with shape {:?}",
                v.shape()
            )));
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let mut data = vec![0.0; m * total];
        for i in 0..m {
            data[i * total + start..i * total + start + n]
                .copy_from_slice(&v.data()[i * n..(i + 1) * n]);
        }
        let req = self.unary_requires(a);
        self.push(
            Op::PadCols(a, start, total),
            Tensor::new_unchecked(vec![m, total], data),
            req,
        )
    }

    /// Per-row Euclidean norm of a rank-2 tensor: sqrt(sum_j x_ij^2).
    pub fn l2_norm_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.square(a)?;
        let ss = self.sum_axis1(sq)?;
        self.sqrt(ss)
    }

    /// Euclidean norm of the whole tensor.
    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.square(a)?;
        let ss = self.sum(sq)?;
        self.sqrt(ss)
    }

    // ── value-mode backward ─────────────────────────────────────────────

    /// Reverse sweep from a scalar node; returns per-node adjoints.
    /// Gradients flow only into subtrees that contain differentiable
    /// leaves.
    pub fn backward(&self, s: NodeId) -> Result<Adjoints> {
        let sv = &self.nodes[s.0].value;
        if sv.numel() != 1 {
            return Err(Error::NotScalar {
                shape: sv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(s.0 + 1);
        adj.resize_with(s.0 + 1, || None);
        adj[s.0] = Some(Tensor::filled(sv.shape(), 1.0).expect("ones"));
        for id in (0..=s.0).rev() {
            if adj[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let a = adj[id].clone().expect("present");
            a.check_finite("backward")?;
            self.apply_vjp(id, &a, &mut adj)?;
        }
        Ok(Adjoints { adj })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], p: NodeId, contrib: Tensor) -> Result<()> {
        match &mut adj[p.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => {
                *slot = Some(contrib);
                Ok(())
            }
        }
    }

    fn apply_vjp(&self, id: usize, a: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        use Op::*;
        let node = &self.nodes[id];
        let wants = |g: &Graph, p: NodeId| g.nodes[p.0].requires_grad;
        match node.op.clone() {
            Leaf | Constant => {}
            MatMul(pa, pb) => {
                let (va, vb) = (&self.nodes[pa.0].value, &self.nodes[pb.0].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if wants(self, pa) {
                    let (d, _, _) = matmul(a.data(), m, n, false, vb.data(), k, n, true)?;
                    self.accumulate(adj, pa, Tensor::new_unchecked(vec![m, k], d))?;
                }
                if wants(self, pb) {
                    let (d, _, _) = matmul(va.data(), m, k, true, a.data(), m, n, false)?;
                    self.accumulate(adj, pb, Tensor::new_unchecked(vec![k, n], d))?;
                }
            }
            Transpose(p) => {
                if wants(self, p) {
                    let (m, n) = (a.shape()[0], a.shape()[1]);
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            d[j * m + i] = a.data()[i * n + j];
                        }
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![n, m], d))?;
                }
            }
            AddBias(px, pb) => {
                if wants(self, px) {
                    self.accumulate(adj, px, a.clone())?;
                }
                if wants(self, pb) {
                    let (m, n) = (a.shape()[0], a.shape()[1]);
                    let mut d = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += a.data()[i * n + j];
                        }
                    }
                    self.accumulate(adj, pb, Tensor::new_unchecked(vec![n], d))?;
                }
            }
            Add(pa, pb) => {
                if wants(self, pa) {
                    self.accumulate(adj, pa, a.clone())?;
                }
                if wants(self, pb) {
                    self.accumulate(adj, pb, a.clone())?;
                }
            }
            Sub(pa, pb) => {
                if wants(self, pa) {
                    self.accumulate(adj, pa, a.clone())?;
                }
                if wants(self, pb) {
                    self.accumulate(adj, pb, a.map(|v| -v))?;
                }
            }
            Mul(pa, pb) => {
                if wants(self, pa) {
                    let d = a.zip(&self.nodes[pb.0].value, "mul_vjp", |x, y| x * y)?;
                    self.accumulate(adj, pa, d)?;
                }
                if wants(self, pb) {
                    let d = a.zip(&self.nodes[pa.0].value, "mul_vjp", |x, y| x * y)?;
                    self.accumulate(adj, pb, d)?;
                }
            }
            Relu(p) => {
                if wants(self, p) {
                    let d = a.zip(&self.nodes[p.0].value, "relu_vjp", |g, x| {
                        if x > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    })?;
                    self.accumulate(adj, p, d)?;
                }
            }
            ReluMask(_) => {}
            Sigmoid(p) => {
                if wants(self, p) {
                    let d = a.zip(&node.value, "sigmoid_vjp", |g, y| g * y * (1.0 - y))?;
                    self.accumulate(adj, p, d)?;
                }
            }
            Scale(p, c) => {
                if wants(self, p) {
                    self.accumulate(adj, p, a.map(|v| c * v))?;
                }
            }
            AddConst(p, _) => {
                if wants(self, p) {
                    self.accumulate(adj, p, a.clone())?;
                }
            }
            Square(p) => {
                if wants(self, p) {
                    let d = a.zip(&self.nodes[p.0].value, "square_vjp", |g, x| 2.0 * x * g)?;
                    self.accumulate(adj, p, d)?;
                }
            }
            Sqrt(p) => {
                if wants(self, p) {
                    let d = a.zip(&node.value, "sqrt_vjp", |g, y| {
                        if y > 0.0 {
                            g * 0.5 / y
                        } else {
                            0.0
                        }
                    })?;
                    self.accumulate(adj, p, d)?;
                }
            }
            Ln(p) => {
                if wants(self, p) {
                    let d = a.zip(&self.nodes[p.0].value, "ln_vjp", |g, x| {
                        if x > LN_CLAMP {
                            g / x
                        } else {
                            0.0
                        }
                    })?;
                    self.accumulate(adj, p, d)?;
                }
            }
            Sum(p) => {
                if wants(self, p) {
                    let g = a.as_scalar()?;
                    let shape = self.nodes[p.0].value.shape();
                    self.accumulate(adj, p, Tensor::new_unchecked(
                        shape.to_vec(),
                        vec![g; self.nodes[p.0].value.numel()],
                    ))?;
                }
            }
            Mean(p) => {
                if wants(self, p) {
                    let pv = &self.nodes[p.0].value;
                    let g = a.as_scalar()? / pv.numel() as f64;
                    self.accumulate(
                        adj,
                        p,
                        Tensor::new_unchecked(pv.shape().to_vec(), vec![g; pv.numel()]),
                    )?;
                }
            }
            SumAxis0(p) => {
                if wants(self, p) {
                    let pv = &self.nodes[p.0].value;
                    let (m, n) = (pv.shape()[0], pv.shape()[1]);
                    let mut d = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        d.extend_from_slice(a.data());
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![m, n], d))?;
                }
            }
            SumAxis1(p) => {
                if wants(self, p) {
                    let pv = &self.nodes[p.0].value;
                    let (m, n) = (pv.shape()[0], pv.shape()[1]);
                    let mut d = Vec::with_capacity(m * n);
                    for i in 0..m {
                        for _ in 0..n {
                            d.push(a.data()[i]);
                        }
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![m, n], d))?;
                }
            }
            RepeatRows(p, m) => {
                if wants(self, p) {
                    let n = self.nodes[p.0].value.shape()[0];
                    let mut d = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += a.data()[i * n + j];
                        }
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![n], d))?;
                }
            }
            BroadcastCol(p, n) => {
                if wants(self, p) {
                    let m = self.nodes[p.0].value.shape()[0];
                    let mut d = vec![0.0; m];
                    for i in 0..m {
                        d[i] = a.data()[i * n..(i + 1) * n].iter().sum();
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![m], d))?;
                }
            }
            BroadcastScalar(p, _) => {
                if wants(self, p) {
                    let s: f64 = a.data().iter().sum();
                    let pv = &self.nodes[p.0].value;
                    self.accumulate(adj, p, Tensor::new_unchecked(pv.shape().to_vec(), vec![s]))?;
                }
            }
            Concat(pa, pb) => {
                let (va, vb) = (&self.nodes[pa.0].value, &self.nodes[pb.0].value);
                let (m, p, q) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if wants(self, pa) {
                    let mut d = Vec::with_capacity(m * p);
                    for i in 0..m {
                        d.extend_from_slice(&a.data()[i * (p + q)..i * (p + q) + p]);
                    }
                    self.accumulate(adj, pa, Tensor::new_unchecked(vec![m, p], d))?;
                }
                if wants(self, pb) {
                    let mut d = Vec::with_capacity(m * q);
                    for i in 0..m {
                        d.extend_from_slice(&a.data()[i * (p + q) + p..(i + 1) * (p + q)]);
                    }
                    self.accumulate(adj, pb, Tensor::new_unchecked(vec![m, q], d))?;
                }
            }
            SliceCols(p, start, len) => {
                if wants(self, p) {
                    let pv = &self.nodes[p.0].value;
                    let (m, n) = (pv.shape()[0], pv.shape()[1]);
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        d[i * n + start..i * n + start + len]
                            .copy_from_slice(&a.data()[i * len..(i + 1) * len]);
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![m, n], d))?;
                }
            }
            PadCols(p, start, total) => {
                if wants(self, p) {
                    let pv = &self.nodes[p.0].value;
                    let (m, n) = (pv.shape()[0], pv.shape()[1]);
                    let mut d = Vec::with_capacity(m * n);
                    for i in 0..m {
                        d.extend_from_slice(&a.data()[i * total + start..i * total + start + n]);
                    }
                    self.accumulate(adj, p, Tensor::new_unchecked(vec![m, n], d))?;
                }
            }
        }
        Ok(())
    }

    // ── graph-mode backward (differentiable input gradients) ────────────

    /// Build `f` on top of `x`, then emit, as new graph nodes, the gradient
    /// of the summed per-row outputs of `f` with respect to `x`. The
    /// returned node has the shape of `x` and remains differentiable with
    /// respect to every parameter `f` touched.
    pub fn grad_wrt_input<F>(&mut self, x: NodeId, f: F) -> Result<NodeId>
    where
        F: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
    {
        let out = f(self, x)?;
        let rows = {
            let xv = self.value(x);
            if xv.shape().len() == 2 {
                xv.shape()[0]
            } else {
                1
            }
        };
        let ov = self.value(out);
        if ov.numel() != rows {
            return Err(Error::InvalidArgument(format!(
                "grad_wrt_input: f must produce one scalar per batch row ({} rows, got shape {:?})",
                rows,
                ov.shape()
            )));
        }
        let s = self.sum(out)?;
        self.emit_input_gradient(s, x)
    }

    fn emit_input_gradient(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        let upto = s.0 + 1;
        // Nodes influenced by x.
        let mut desc = vec![false; upto];
        desc[x.0] = true;
        for id in x.0 + 1..upto {
            let [p0, p1] = self.nodes[id].op.parents();
            if p0.is_some_and(|p| desc[p.0]) || p1.is_some_and(|p| desc[p.0]) {
                desc[id] = true;
            }
        }
        if !desc[s.0] {
            let shape = self.value(x).shape().to_vec();
            return self.constant(Tensor::zeros(&shape));
        }
        // Nodes feeding s.
        let mut anc = vec![false; upto];
        anc[s.0] = true;
        for id in (0..upto).rev() {
            if anc[id] {
                for p in self.nodes[id].op.parents().into_iter().flatten() {
                    anc[p.0] = true;
                }
            }
        }
        let mut adj: Vec<Option<NodeId>> = vec![None; upto];
        let seed = self.constant(Tensor::scalar(1.0)?)?;
        adj[s.0] = Some(seed);
        for id in (x.0..upto).rev() {
            if !(anc[id] && desc[id]) {
                continue;
            }
            let Some(a) = adj[id] else { continue };
            let contribs = self.emit_vjp(id, a, &desc)?;
            for (p, c) in contribs {
                adj[p.0] = Some(match adj[p.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }
        match adj[x.0] {
            Some(g) => Ok(g),
            None => {
                let shape = self.value(x).shape().to_vec();
                self.constant(Tensor::zeros(&shape))
            }
        }
    }

    /// Emit the vector-Jacobian product of node `id` as graph nodes, one
    /// contribution per parent that lies on the path back to the input.
    fn emit_vjp(
        &mut self,
        id: usize,
        a: NodeId,
        on_path: &[bool],
    ) -> Result<Vec<(NodeId, NodeId)>> {
        use Op::*;
        let op = self.nodes[id].op.clone();
        let this = NodeId(id);
        let mut out = Vec::new();
        let path = |p: NodeId| on_path[p.0];
        match op {
            Leaf | Constant | ReluMask(_) => {}
            MatMul(pa, pb) => {
                if path(pa) {
                    let bt = self.transpose(pb)?;
                    out.push((pa, self.matmul(a, bt)?));
                }
                if path(pb) {
                    let at = self.transpose(pa)?;
                    out.push((pb, self.matmul(at, a)?));
                }
            }
            Transpose(p) => {
                if path(p) {
                    out.push((p, self.transpose(a)?));
                }
            }
            AddBias(px, pb) => {
                if path(px) {
                    out.push((px, a));
                }
                if path(pb) {
                    out.push((pb, self.sum_axis0(a)?));
                }
            }
            Add(pa, pb) => {
                if path(pa) {
                    out.push((pa, a));
                }
                if path(pb) {
                    out.push((pb, a));
                }
            }
            Sub(pa, pb) => {
                if path(pa) {
                    out.push((pa, a));
                }
                if path(pb) {
                    out.push((pb, self.scale(a, -1.0)?));
                }
            }
            Mul(pa, pb) => {
                if path(pa) {
                    out.push((pa, self.mul(a, pb)?));
                }
                if path(pb) {
                    out.push((pb, self.mul(a, pa)?));
                }
            }
            Relu(p) => {
                if path(p) {
                    let mask = self.relu_mask(p)?;
                    out.push((p, self.mul(a, mask)?));
                }
            }
            Sigmoid(p) => {
                if path(p) {
                    let om = self.one_minus(this)?;
                    let dydx = self.mul(this, om)?;
                    out.push((p, self.mul(a, dydx)?));
                }
            }
            Scale(p, c) => {
                if path(p) {
                    out.push((p, self.scale(a, c)?));
                }
            }
            AddConst(p, _) => {
                if path(p) {
                    out.push((p, a));
                }
            }
            Square(p) => {
                if path(p) {
                    let two_x = self.scale(p, 2.0)?;
                    out.push((p, self.mul(a, two_x)?));
                }
            }
            Sum(p) => {
                if path(p) {
                    let shape = self.value(p).shape().to_vec();
                    out.push((p, self.broadcast_scalar(a, &shape)?));
                }
            }
            Mean(p) => {
                if path(p) {
                    let pv = self.value(p);
                    let (numel, shape) = (pv.numel(), pv.shape().to_vec());
                    let scaled = self.scale(a, 1.0 / numel as f64)?;
                    out.push((p, self.broadcast_scalar(scaled, &shape)?));
                }
            }
            SumAxis0(p) => {
                if path(p) {
                    let m = self.value(p).shape()[0];
                    out.push((p, self.repeat_rows(a, m)?));
                }
            }
            SumAxis1(p) => {
                if path(p) {
                    let n = self.value(p).shape()[1];
                    out.push((p, self.broadcast_col(a, n)?));
                }
            }
            RepeatRows(p, _) => {
                if path(p) {
                    out.push((p, self.sum_axis0(a)?));
                }
            }
            BroadcastCol(p, _) => {
                if path(p) {
                    out.push((p, self.sum_axis1(a)?));
                }
            }
            BroadcastScalar(p, _) => {
                if path(p) {
                    out.push((p, self.sum(a)?));
                }
            }
            Concat(pa, pb) => {
                let p = self.value(pa).shape()[1];
                let q = self.value(pb).shape()[1];
                if path(pa) {
                    out.push((pa, self.slice_cols(a, 0, p)?));
                }
                if path(pb) {
                    out.push((pb, self.slice_cols(a, p, q)?));
                }
            }
            SliceCols(p, start, _) => {
                if path(p) {
                    let total = self.value(p).shape()[1];
                    out.push((p, self.pad_cols(a, start, total)?));
                }
            }
            PadCols(p, start, _) => {
                if path(p) {
                    let len = self.value(p).shape()[1];
                    out.push((p, self.slice_cols(a, start, len)?));
                }
            }
            Sqrt(_) | Ln(_) => {
                return Err(Error::SecondOrderUnsupported {
                    op: self.nodes[id].op.name(),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0).unwrap()).unwrap();
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.scalar_value(y).unwrap(), 0.5);
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.7, 2.5]).unwrap()).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.5]);
    }

    #[test]
    fn sigmoid_never_saturates_to_exact_bounds() {
        let mut g = Graph::new();
        let x = g
            .constant(Tensor::vector(vec![-1e6, -800.0, 800.0, 1e6]).unwrap())
            .unwrap();
        let y = g.sigmoid(x).unwrap();
        for &v in g.value(y).data() {
            assert!(v > 0.0 && v < 1.0, "sigmoid output {v} hit a bound");
        }
    }

    #[test]
    fn matmul_graph_matches_hand_example() {
        let mut g = Graph::new();
        let a = g.constant(t2(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let b = g.constant(t2(&[vec![5.0, 6.0], vec![7.0, 8.0]])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn backward_of_x_squared() {
        // f(x) = x·x at x=3 → df/dx = 6
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).unwrap()).unwrap();
        let y = g.mul(x, x).unwrap();
        let adj = g.backward(y).unwrap();
        assert_eq!(adj.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_of_sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0).unwrap()).unwrap();
        let y = g.sigmoid(x).unwrap();
        let adj = g.backward(y).unwrap();
        assert!((adj.get(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn untouched_leaf_gets_no_adjoint() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).unwrap()).unwrap();
        let unused = g.leaf(Tensor::scalar(5.0).unwrap()).unwrap();
        let y = g.square(x).unwrap();
        let adj = g.backward(y).unwrap();
        assert!(adj.get(unused).is_none());
        assert_eq!(adj.get_or_zeros(unused, &[]).data(), &[0.0]);
    }

    #[test]
    fn backward_is_deterministic_bitwise() {
        let run = || {
            let mut g = Graph::new();
            let x = g
                .leaf(t2(&[vec![0.3, -1.2, 0.7], vec![2.0, 0.1, -0.4]]))
                .unwrap();
            let w = g
                .leaf(t2(&[vec![0.5, -0.2], vec![1.5, 0.8], vec![-0.3, 0.9]]))
                .unwrap();
            let z = g.matmul(x, w).unwrap();
            let h = g.sigmoid(z).unwrap();
            let s = g.mean(h).unwrap();
            let adj = g.backward(s).unwrap();
            (
                g.value(s).data().to_vec(),
                adj.get(w).unwrap().data().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn grad_wrt_input_linear_map() {
        // f(v) = w·v with w = [3,4] → gradient [3,4] regardless of v.
        let mut g = Graph::new();
        let v = g.constant(t2(&[vec![10.0, -2.0]])).unwrap();
        let w = g.constant(t2(&[vec![3.0], vec![4.0]])).unwrap();
        let grad = g.grad_wrt_input(v, |g, v| g.matmul(v, w)).unwrap();
        assert_eq!(g.value(grad).data(), &[3.0, 4.0]);
    }

    #[test]
    fn grad_wrt_input_sum_of_squares() {
        // f(v) = sum(v²) at v = [1,2] → [2,4]
        let mut g = Graph::new();
        let v = g.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let grad = g
            .grad_wrt_input(v, |g, v| {
                let sq = g.square(v)?;
                g.sum_axis1(sq)
            })
            .unwrap();
        assert_eq!(g.value(grad).data(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_wrt_input_rejects_non_row_scalar() {
        let mut g = Graph::new();
        let v = g.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let err = g.grad_wrt_input(v, |g, v| g.square(v)).unwrap_err();
        assert!(err.to_string().contains("scalar per batch row"));
    }

    #[test]
    fn grad_wrt_input_of_unconnected_input_is_zero() {
        let mut g = Graph::new();
        let v = g.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let c = g.constant(t2(&[vec![5.0, 5.0]])).unwrap();
        let grad = g
            .grad_wrt_input(v, |g, _| {
                let s = g.sum_axis1(c)?;
                Ok(s)
            })
            .unwrap();
        assert_eq!(g.value(grad).data(), &[0.0, 0.0]);
    }

    #[test]
    fn linearity_of_backward() {
        // backward(a·f + b·g) == a·backward(f) + b·backward(g) to 1e-12
        let (a, b) = (2.5f64, -1.25f64);
        let build = |g: &mut Graph, x: NodeId| -> (NodeId, NodeId) {
            let f = {
                let sq = g.square(x).unwrap();
                g.sum(sq).unwrap()
            };
            let gg = {
                let sg = g.sigmoid(x).unwrap();
                g.sum(sg).unwrap()
            };
            (f, gg)
        };
        let x0 = t2(&[vec![0.4, -0.9], vec![1.3, 0.2]]);

        let mut g1 = Graph::new();
        let x = g1.leaf(x0.clone()).unwrap();
        let (f, gg) = build(&mut g1, x);
        let fa = g1.scale(f, a).unwrap();
        let gb = g1.scale(gg, b).unwrap();
        let tot = g1.add(fa, gb).unwrap();
        let combined = g1.backward(tot).unwrap().get(x).unwrap().clone();

        let mut g2 = Graph::new();
        let x2 = g2.leaf(x0.clone()).unwrap();
        let (f2, gg2) = build(&mut g2, x2);
        let df = g2.backward(f2).unwrap().get(x2).unwrap().clone();
        let dg = g2.backward(gg2).unwrap().get(x2).unwrap().clone();

        for i in 0..combined.numel() {
            let expect = a * df.data()[i] + b * dg.data()[i];
            assert!((combined.data()[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn second_order_unsupported_ops_are_reported() {
        let mut g = Graph::new();
        let v = g.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let err = g
            .grad_wrt_input(v, |g, v| {
                let s = g.sqrt(v)?;
                g.sum_axis1(s)
            })
            .unwrap_err();
        assert!(matches!(err, Error::SecondOrderUnsupported { op: "sqrt" }));
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(t2(&[vec![1.0, 2.0]])).unwrap();
        let b = g.leaf(t2(&[vec![3.0, 4.0, 5.0]])).unwrap();
        let cat = g.concat(a, b).unwrap();
        assert_eq!(g.value(cat).shape(), &[1, 5]);
        // s = sum of the middle three columns → grads: a gets [0,1], b gets [1,1,0]
        let mid = g.slice_cols(cat, 1, 3).unwrap();
        let s = g.sum(mid).unwrap();
        let adj = g.backward(s).unwrap();
        assert_eq!(adj.get(a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(adj.get(b).unwrap().data(), &[1.0, 1.0, 0.0]);
    }
}
