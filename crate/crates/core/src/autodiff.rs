//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in creation order, which is also a
//! topological order. Vector-Jacobian products are themselves expressed as
//! graph operations, so [`Graph::grad`] with `create_graph = true` returns
//! gradients that can be differentiated again. The one-step unrolled
//! meta-gradient relies on this: the inner SGD update stays in the graph
//! and the outer loss backpropagates through it.
//!
//! ```
//! use calibkit::autodiff::Graph;
//! use calibkit::tensor::Tensor;
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::row_vector(vec![1.0, 2.0, 3.0]));
//! let loss = x.mul(x).unwrap().mean();
//! g.backward(loss).unwrap();
//! let grad = g.grad_of(x).unwrap();
//! assert!((grad.data()[2] - 2.0).abs() < 1e-15);
//! ```

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type Shape = (usize, usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    PowScalar(usize, f64),
    Sigmoid(usize),
    Relu(usize),
    Softplus(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumTo(usize),
    BroadcastTo(usize),
    Max(usize),
    MaxRows(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Pick(usize, Rc<[usize]>),
    Scatter(usize, Rc<[usize]>),
    SoftmaxRows(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Not `Send`: one graph belongs to one training step on
/// one thread.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<HashMap<usize, Tensor>>,
    backward_done: Cell<bool>,
    no_grad: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .field("backward_done", &self.backward_done.get())
            .finish()
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(HashMap::new()),
            backward_done: Cell::new(false),
            no_grad: Cell::new(false),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A constant copy of `v`'s current value; gradient does not flow back.
    pub fn detach<'g>(&'g self, v: Var<'g>) -> Var<'g> {
        self.constant((*v.value()).clone())
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let requires_grad = requires_grad && !self.no_grad.get();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradients of a scalar `loss` with respect to `wrt`. With
    /// `create_graph`, the returned gradients are differentiable graph
    /// nodes; otherwise they are constants. Inputs the loss does not
    /// depend on get `None`.
    pub fn grad<'g>(
        &'g self,
        loss: Var<'g>,
        wrt: &[Var<'g>],
        create_graph: bool,
    ) -> Result<Vec<Option<Var<'g>>>> {
        let adjoints = self.adjoints(loss, create_graph)?;
        Ok(wrt
            .iter()
            .map(|w| adjoints.get(w.id).copied().flatten())
            .collect())
    }

    /// Populates gradient buffers of every reachable differentiable leaf.
    /// A second call without [`Graph::reset_grads`] is a contract error.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::Contract(
                "backward called twice without resetting gradients".into(),
            ));
        }
        let adjoints = self.adjoints(loss, false)?;
        let mut grads = self.grads.borrow_mut();
        for (id, adj) in adjoints.iter().enumerate() {
            let Some(adj) = adj else { continue };
            let node_is_leaf = {
                let nodes = self.nodes.borrow();
                matches!(nodes[id].op, Op::Leaf) && nodes[id].requires_grad
            };
            if node_is_leaf {
                grads.insert(id, (*adj.value()).clone());
            }
        }
        self.backward_done.set(true);
        Ok(())
    }

    /// Gradient buffer filled by the last [`Graph::backward`].
    pub fn grad_of(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(&v.id).cloned()
    }

    pub fn reset_grads(&self) {
        self.grads.borrow_mut().clear();
        self.backward_done.set(false);
    }

    fn adjoints<'g>(&'g self, loss: Var<'g>, create_graph: bool) -> Result<Vec<Option<Var<'g>>>> {
        if loss.shape() != (1, 1) {
            let (r, c) = loss.shape();
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {r}x{c}"
            )));
        }
        let previous = self.no_grad.replace(!create_graph);
        let result = self.sweep(loss);
        self.no_grad.set(previous);
        result
    }

    fn sweep<'g>(&'g self, loss: Var<'g>) -> Result<Vec<Option<Var<'g>>>> {
        let mut adj: Vec<Option<Var<'g>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(self.constant(Tensor::scalar(1.0)));
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[id].requires_grad {
                    continue;
                }
                nodes[id].op.clone()
            };
            for (input, contrib) in self.vjp(id, &op, g)? {
                adj[input] = Some(match adj[input] {
                    Some(acc) => acc.add(contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(adj)
    }

    /// Input adjoints of node `id` given its output adjoint `g`, only for
    /// inputs that require gradient.
    fn vjp<'g>(&'g self, id: usize, op: &Op, g: Var<'g>) -> Result<Vec<(usize, Var<'g>)>> {
        let out = self.var(id);
        let mut res = Vec::with_capacity(2);
        let want = |i: usize| self.requires(i);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, g.sum_to(self.var(b).shape())?));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, g.sum_to(self.var(b).shape())?.neg()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.var(a), self.var(b));
                if want(a) {
                    res.push((a, g.mul(vb)?));
                }
                if want(b) {
                    res.push((b, g.mul(va)?.sum_to(vb.shape())?));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.var(a), self.var(b));
                if want(a) {
                    res.push((a, g.div(vb)?));
                }
                if want(b) {
                    let gb = g.mul(va)?.div(vb.mul(vb)?)?.sum_to(vb.shape())?.neg();
                    res.push((b, gb));
                }
            }
            Op::Neg(a) => res.push((a, g.neg())),
            Op::Scale(a, c) => res.push((a, g.scale(c))),
            Op::AddScalar(a) => res.push((a, g)),
            Op::Exp(a) => res.push((a, g.mul(out)?)),
            Op::Log(a) => res.push((a, g.div(self.var(a))?)),
            Op::Abs(a) => {
                let sign = self.value_of(a).map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                res.push((a, g.mul(self.constant(sign))?));
            }
            Op::PowScalar(a, c) => {
                let d = self.var(a).powf(c - 1.0).scale(c);
                res.push((a, g.mul(d)?));
            }
            Op::Sigmoid(a) => {
                let d = out.mul(out.neg().add_scalar(1.0))?;
                res.push((a, g.mul(d)?));
            }
            Op::Relu(a) => {
                let mask = self.value_of(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                res.push((a, g.mul(self.constant(mask))?));
            }
            Op::Softplus(a) => res.push((a, g.mul(self.var(a).sigmoid())?)),
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value_of(a)
                    .map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
                res.push((a, g.mul(self.constant(mask))?));
            }
            Op::Sum(a) => res.push((a, g.broadcast_to(self.var(a).shape())?)),
            Op::Mean(a) => {
                let n = self.value_of(a).len() as f64;
                res.push((a, g.broadcast_to(self.var(a).shape())?.scale(1.0 / n)));
            }
            Op::SumTo(a) => res.push((a, g.broadcast_to(self.var(a).shape())?)),
            Op::BroadcastTo(a) => res.push((a, g.sum_to(self.var(a).shape())?)),
            Op::Max(a) => {
                let x = self.value_of(a);
                let best = crate::tensor::argmax(x.data());
                let mut mask = Tensor::zeros(x.rows(), x.cols());
                mask.data_mut()[best] = 1.0;
                res.push((a, self.constant(mask).mul(g)?));
            }
            Op::MaxRows(a) => {
                let x = self.value_of(a);
                let mut mask = Tensor::zeros(x.rows(), x.cols());
                for (r, c) in x.argmax_rows().into_iter().enumerate() {
                    mask.set(r, c, 1.0);
                }
                res.push((a, self.constant(mask).mul(g)?));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.var(a), self.var(b));
                if want(a) {
                    res.push((a, g.matmul(vb.t())?));
                }
                if want(b) {
                    res.push((b, va.t().matmul(g)?));
                }
            }
            Op::Transpose(a) => res.push((a, g.t())),
            Op::Pick(a, ref idx) => {
                let cols = self.var(a).shape().1;
                res.push((a, g.scatter(Rc::clone(idx), cols)?));
            }
            Op::Scatter(a, ref idx) => res.push((a, g.pick_shared(Rc::clone(idx))?)),
            Op::SoftmaxRows(a) => {
                let rows = out.shape().0;
                let centered = g.sub(g.mul(out)?.sum_to((rows, 1))?)?;
                res.push((a, out.mul(centered)?));
            }
        }
        Ok(res)
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(self, other: Var<'g>, value: Tensor, op: Op) -> Var<'g> {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, rg)
    }

    fn zip(self, other: Var<'g>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value().zip_broadcast(&other.value(), name, f)
    }

    /// `self + other`; `other` may be a row, column or scalar broadcast.
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip(other, "div", |a, b| a / b)?;
        Ok(self.binary(other, v, Op::Div(self.id, other.id)))
    }

    pub fn neg(self) -> Var<'g> {
        let v = self.value().map(|a| -a);
        self.unary(v, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let v = self.value().map(|a| a * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let v = self.value().map(|a| a + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn exp(self) -> Var<'g> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    /// Natural log. Callers clamp into the positive domain first.
    pub fn log(self) -> Var<'g> {
        let v = self.value().map(f64::ln);
        self.unary(v, Op::Log(self.id))
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(self) -> Var<'g> {
        let v = self.value().map(f64::abs);
        self.unary(v, Op::Abs(self.id))
    }

    pub fn powf(self, c: f64) -> Var<'g> {
        let v = self.value().map(|a| a.powf(c));
        self.unary(v, Op::PowScalar(self.id, c))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let v = self.value().map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        let v = self.value().map(|a| a.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn softplus(self) -> Var<'g> {
        let v = self.value().map(softplus);
        self.unary(v, Op::Softplus(self.id))
    }

    /// Clamp into `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        let v = self.value().map(|a| a.clamp(lo, hi));
        self.unary(v, Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().mean());
        self.unary(v, Op::Mean(self.id))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_rows(self) -> Result<Var<'g>> {
        self.sum_to((self.shape().0, 1))
    }

    /// Column sums as a `1 x k` row.
    pub fn sum_cols(self) -> Result<Var<'g>> {
        self.sum_to((1, self.shape().1))
    }

    pub fn sum_to(self, shape: Shape) -> Result<Var<'g>> {
        if shape == self.shape() {
            return Ok(self);
        }
        let v = self.value().sum_to(shape)?;
        Ok(self.unary(v, Op::SumTo(self.id)))
    }

    pub fn broadcast_to(self, shape: Shape) -> Result<Var<'g>> {
        if shape == self.shape() {
            return Ok(self);
        }
        let v = self.value().broadcast_to(shape)?;
        Ok(self.unary(v, Op::BroadcastTo(self.id)))
    }

    /// Largest entry overall (first on ties).
    pub fn max(self) -> Var<'g> {
        let x = self.value();
        let v = Tensor::scalar(x.data()[crate::tensor::argmax(x.data())]);
        self.unary(v, Op::Max(self.id))
    }

    /// Per-row maximum as an `n x 1` column.
    pub fn max_rows(self) -> Var<'g> {
        let x = self.value();
        let v = Tensor::column(x.iter_rows().zip(x.argmax_rows()).map(|(r, c)| r[c]).collect());
        self.unary(v, Op::MaxRows(self.id))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn t(self) -> Var<'g> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    /// `out[i] = self[i, indices[i]]` as an `n x 1` column.
    pub fn pick(self, indices: &[usize]) -> Result<Var<'g>> {
        self.pick_shared(Rc::from(indices))
    }

    fn pick_shared(self, indices: Rc<[usize]>) -> Result<Var<'g>> {
        let x = self.value();
        if indices.len() != x.rows() {
            return Err(Error::dim(
                "pick",
                format!("{} indices for {} rows", indices.len(), x.rows()),
            ));
        }
        let mut out = Vec::with_capacity(x.rows());
        for (r, &c) in indices.iter().enumerate() {
            if c >= x.cols() {
                return Err(Error::dim("pick", format!("column {c} out of {}", x.cols())));
            }
            out.push(x.get(r, c));
        }
        Ok(self.unary(Tensor::column(out), Op::Pick(self.id, indices)))
    }

    /// Places column `self[i]` at `(i, indices[i])` of an `n x cols` zero matrix.
    fn scatter(self, indices: Rc<[usize]>, cols: usize) -> Result<Var<'g>> {
        let x = self.value();
        if x.cols() != 1 || x.rows() != indices.len() {
            return Err(Error::dim("scatter", "expects an n x 1 column"));
        }
        let mut out = Tensor::zeros(x.rows(), cols);
        for (r, &c) in indices.iter().enumerate() {
            out.set(r, c, x.get(r, 0));
        }
        Ok(self.unary(out, Op::Scatter(self.id, indices)))
    }

    pub fn softmax_rows(self) -> Var<'g> {
        let v = self.value().softmax_rows();
        self.unary(v, Op::SoftmaxRows(self.id))
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

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
