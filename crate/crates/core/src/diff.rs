//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation in execution order with its primal
//! value computed eagerly. [`Graph::backward`] walks the tape once in strictly
//! decreasing node order, accumulating adjoints, and adds the gradients of
//! parameter leaves into their [`Parameter`] accumulators.
//!
//! Jacobian-vector products are not a tape feature: the flow propagates
//! tangents with ordinary recorded operations, using
//! [`Op::ReluMask`] for the ReLU derivative, so parameter gradients of any
//! function of a JVP come out of a single backward pass.
//!
//! The [`Backend`] trait lets model code run either eagerly on plain tensors
//! ([`Eager`]) or recorded on a tape ([`Recorder`]) without duplication.

use alloc::borrow::Cow;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Index of a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Index of a [`Parameter`] inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

/// Primitive operations recordable on a [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// Matrix plus a row broadcast over its rows (bias add).
    AddRow,
    /// Matrix times a row broadcast over its rows.
    MulRow,
    MatMul,
    Relu,
    /// `inputs = [h, v]`: `v ⊙ 1[h > 0]`, with the mask treated as a constant.
    ReluMask,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Square,
    /// Sum of all entries, scalar result.
    Sum,
    /// Mean of all entries, scalar result.
    Mean,
    /// Row-wise sum of a matrix, `m × 1` result.
    SumCols,
    /// Squared Euclidean norm of all entries, scalar result.
    L2NormSq,
    /// Column merge: first input fills `left`, second fills `right`.
    Concat { left: Vec<usize>, right: Vec<usize> },
    /// Column gather.
    Slice { cols: Vec<usize> },
    ScaleByConstant(f64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddRow => "add_row",
            Op::MulRow => "mul_row",
            Op::MatMul => "matmul",
            Op::Relu => "relu",
            Op::ReluMask => "relu_mask_stop_gradient",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Square => "square",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumCols => "sum_cols",
            Op::L2NormSq => "l2_norm_sq",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::ScaleByConstant(_) => "scale_by_constant",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Add
            | Op::Sub
            | Op::Mul
            | Op::Div
            | Op::AddRow
            | Op::MulRow
            | Op::MatMul
            | Op::ReluMask
            | Op::Concat { .. } => 2,
            _ => 1,
        }
    }

    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let a = x[0];
        Ok(match self {
            Op::Add => a.zip_map(x[1], "add", |p, q| p + q)?,
            Op::Sub => a.zip_map(x[1], "sub", |p, q| p - q)?,
            Op::Mul => a.zip_map(x[1], "mul", |p, q| p * q)?,
            Op::Div => a.zip_map(x[1], "div", |p, q| p / q)?,
            Op::AddRow => a.add_row(x[1])?,
            Op::MulRow => a.mul_row(x[1])?,
            Op::MatMul => a.matmul(x[1])?,
            Op::Relu => a.map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::ReluMask => a.zip_map(x[1], "relu_mask_stop_gradient", |h, v| if h > 0.0 { v } else { 0.0 })?,
            Op::Exp => a.map(math::exp),
            Op::Log => a.map(math::ln),
            Op::Sin => a.map(math::sin),
            Op::Cos => a.map(math::cos),
            Op::Tanh => a.map(math::tanh),
            Op::Square => a.map(|v| v * v),
            Op::Sum => Tensor::scalar(a.sum()),
            Op::Mean => {
                if a.numel() == 0 {
                    return Err(Error::Empty("mean"));
                }
                Tensor::scalar(a.sum() / a.numel() as f64)
            }
            Op::SumCols => a.sum_cols()?,
            Op::L2NormSq => Tensor::scalar(a.data().iter().map(|v| v * v).sum()),
            Op::Concat { left, right } => Tensor::merge_cols(a, left, x[1], right)?,
            Op::Slice { cols } => a.select_cols(cols)?,
            Op::ScaleByConstant(c) => a.scale(*c),
        })
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Constant,
    Leaf,
    Param(ParamId),
    Op { op: Op, inputs: [NodeId; 2] },
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    value: Tensor,
    requires_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Input ids of an operation node, empty for leaves.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id.0].kind {
            NodeKind::Op { op, inputs } => inputs[..op.arity()].to_vec(),
            _ => Vec::new(),
        }
    }

    fn push(&mut self, kind: NodeKind, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            kind,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(NodeKind::Constant, value, false)
    }

    /// An input whose gradient is reported in [`Gradients`].
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(NodeKind::Leaf, value, true)
    }

    /// Snapshot of a parameter; its gradient is accumulated into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(NodeKind::Param(id), store.value(id).clone(), true)
    }

    /// Appends `op` applied to `inputs`, evaluating it eagerly.
    pub fn record(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != op.arity() {
            return Err(Error::invalid("wrong number of operation inputs"));
        }
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(Error::invalid(alloc::format!("unknown node {}", bad.0)));
        }
        let value = {
            let args: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            op.forward(&args)?
        };
        let requires_grad = match op {
            Op::ReluMask => self.nodes[inputs[1].0].requires_grad,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        let ids = [inputs[0], *inputs.get(1).unwrap_or(&inputs[0])];
        Ok(self.push(NodeKind::Op { op, inputs: ids }, value, requires_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Div, &[a, b])
    }
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::AddRow, &[a, row])
    }
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::MulRow, &[a, row])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul, &[a, b])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu, &[a])
    }
    pub fn relu_mask(&mut self, h: NodeId, v: NodeId) -> Result<NodeId> {
        self.record(Op::ReluMask, &[h, v])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log, &[a])
    }
    pub fn sin(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sin, &[a])
    }
    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Cos, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Square, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Mean, &[a])
    }
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::SumCols, &[a])
    }
    pub fn l2_norm_sq(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::L2NormSq, &[a])
    }
    pub fn concat(&mut self, a: NodeId, left: &[usize], b: NodeId, right: &[usize]) -> Result<NodeId> {
        self.record(
            Op::Concat {
                left: left.to_vec(),
                right: right.to_vec(),
            },
            &[a, b],
        )
    }
    pub fn slice(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        self.record(Op::Slice { cols: cols.to_vec() }, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::ScaleByConstant(c), &[a])
    }

    /// Reverse pass from a scalar `root`.
    ///
    /// Parameter gradients are added to `store` (repeated calls accumulate);
    /// leaf gradients are returned.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                adj[id] = None;
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            match &node.kind {
                NodeKind::Constant => {}
                NodeKind::Leaf => adj[id] = Some(g),
                NodeKind::Param(pid) => store.get_mut(*pid).grad.add_assign(&g)?,
                NodeKind::Op { op, inputs } => {
                    self.propagate(op, inputs, &node.value, &g, &mut adj)?;
                }
            }
        }
        Ok(Gradients { adj })
    }

    fn propagate(
        &self,
        op: &Op,
        inputs: &[NodeId; 2],
        out: &Tensor,
        g: &Tensor,
        adj: &mut [Option<Tensor>],
    ) -> Result<()> {
        let a = inputs[0];
        let b = inputs[1];
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        match op {
            Op::Add => {
                self.acc(adj, a, g.clone())?;
                self.acc(adj, b, g.clone())?;
            }
            Op::Sub => {
                self.acc(adj, a, g.clone())?;
                self.acc(adj, b, g.scale(-1.0))?;
            }
            Op::Mul => {
                if self.wants(a) {
                    self.acc(adj, a, g.zip_map(bv, "mul", |p, q| p * q)?)?;
                }
                if self.wants(b) {
                    self.acc(adj, b, g.zip_map(av, "mul", |p, q| p * q)?)?;
                }
            }
            Op::Div => {
                if self.wants(a) {
                    self.acc(adj, a, g.zip_map(bv, "div", |p, q| p / q)?)?;
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = g.zip_map(out, "div", |p, q| p * q)?;
                    self.acc(adj, b, t.zip_map(bv, "div", |p, q| -p / q)?)?;
                }
            }
            Op::AddRow => {
                self.acc(adj, a, g.clone())?;
                if self.wants(b) {
                    let s = g.sum_rows()?;
                    self.acc(adj, b, Tensor::new(bv.shape().to_vec(), s.into_data())?)?;
                }
            }
            Op::MulRow => {
                if self.wants(a) {
                    self.acc(adj, a, g.mul_row(bv)?)?;
                }
                if self.wants(b) {
                    let s = g.zip_map(av, "mul_row", |p, q| p * q)?.sum_rows()?;
                    self.acc(adj, b, Tensor::new(bv.shape().to_vec(), s.into_data())?)?;
                }
            }
            Op::MatMul => {
                if self.wants(a) {
                    self.acc(adj, a, g.matmul_nt(bv)?)?;
                }
                if self.wants(b) {
                    self.acc(adj, b, av.matmul_tn(g)?)?;
                }
            }
            Op::Relu => {
                self.acc(adj, a, g.zip_map(av, "relu", |p, h| if h > 0.0 { p } else { 0.0 })?)?;
            }
            Op::ReluMask => {
                self.acc(adj, b, g.zip_map(av, "relu_mask", |p, h| if h > 0.0 { p } else { 0.0 })?)?;
            }
            Op::Exp => self.acc(adj, a, g.zip_map(out, "exp", |p, y| p * y)?)?,
            Op::Log => self.acc(adj, a, g.zip_map(av, "log", |p, x| p / x)?)?,
            Op::Sin => self.acc(adj, a, g.zip_map(av, "sin", |p, x| p * math::cos(x))?)?,
            Op::Cos => self.acc(adj, a, g.zip_map(av, "cos", |p, x| -p * math::sin(x))?)?,
            Op::Tanh => self.acc(adj, a, g.zip_map(out, "tanh", |p, y| p * (1.0 - y * y))?)?,
            Op::Square => self.acc(adj, a, g.zip_map(av, "square", |p, x| 2.0 * p * x)?)?,
            Op::Sum => self.acc(adj, a, Tensor::full(av.shape(), g.item()))?,
            Op::Mean => {
                let n = av.numel() as f64;
                self.acc(adj, a, Tensor::full(av.shape(), g.item() / n))?
            }
            Op::SumCols => {
                let cols = av.cols();
                let mut t = Tensor::zeros(av.shape());
                for (r, chunk) in t.data_mut().chunks_mut(cols.max(1)).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = g.data()[r]);
                }
                self.acc(adj, a, t)?
            }
            Op::L2NormSq => {
                let s = g.item();
                self.acc(adj, a, av.map(|x| 2.0 * s * x))?
            }
            Op::Concat { left, right } => {
                if self.wants(a) {
                    self.acc(adj, a, g.select_cols(left)?)?;
                }
                if self.wants(b) {
                    self.acc(adj, b, g.select_cols(right)?)?;
                }
            }
            Op::Slice { cols } => {
                let mut t = Tensor::zeros(av.shape());
                let width = av.cols();
                for r in 0..g.rows() {
                    for (j, &c) in cols.iter().enumerate() {
                        t.data_mut()[r * width + c] += g.get(r, j);
                    }
                }
                self.acc(adj, a, t)?
            }
            Op::ScaleByConstant(c) => self.acc(adj, a, g.scale(*c))?,
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn acc(&self, adj: &mut [Option<Tensor>], id: NodeId, t: Tensor) -> Result<()> {
        if !self.wants(id) {
            return Ok(());
        }
        match &mut adj[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => {
                *slot = Some(t);
                Ok(())
            }
        }
    }
}

/// Leaf gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to a leaf; `None` if the leaf does
    /// not influence the root.
    pub fn wrt(&self, leaf: NodeId) -> Option<&Tensor> {
        self.adj.get(leaf.0).and_then(Option::as_ref)
    }
}

/// Maximum relative discrepancy between reverse-mode and central-difference
/// gradients over every parameter entry in `store`.
///
/// `build` records the scalar function on a fresh graph and returns its root.
/// The error for each entry is `|autodiff − fd| / max(1, |fd|)`.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    store.zero_grad();
    let mut graph = Graph::new();
    let root = build(&mut graph, store)?;
    graph.backward(root, store)?;
    let analytic: Vec<Tensor> = store.iter().map(|p| p.grad.clone()).collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let r = build(&mut g, store)?;
        Ok(g.value(r).item())
    };

    let mut worst: f64 = 0.0;
    for pid in 0..store.len() {
        for k in 0..store.get(ParamId(pid)).value.numel() {
            let orig = store.get(ParamId(pid)).value.data()[k];
            store.get_mut(ParamId(pid)).value.data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(ParamId(pid)).value.data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(ParamId(pid)).value.data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let ad = analytic[pid].data()[k];
            let err = math::abs(ad - fd) / math::abs(fd).max(1.0);
            worst = worst.max(err);
        }
    }
    store.zero_grad();
    Ok(worst)
}

/// Execution strategy for model code: eager tensors or a recorded tape.
pub trait Backend {
    type Var: Clone;

    fn constant(&mut self, value: Tensor) -> Self::Var;
    fn param(&mut self, id: ParamId) -> Self::Var;
    fn value<'v>(&'v self, var: &'v Self::Var) -> &'v Tensor;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn add_row(&mut self, a: &Self::Var, row: &Self::Var) -> Result<Self::Var>;
    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn relu_mask(&mut self, h: &Self::Var, v: &Self::Var) -> Result<Self::Var>;
    fn exp(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn square(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, a: &Self::Var, c: f64) -> Result<Self::Var>;
    fn sum_cols(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn slice(&mut self, a: &Self::Var, cols: &[usize]) -> Result<Self::Var>;
    fn concat(&mut self, a: &Self::Var, left: &[usize], b: &Self::Var, right: &[usize]) -> Result<Self::Var>;
}

/// Evaluates directly on tensors, borrowing parameters from a store.
pub struct Eager<'a> {
    params: &'a ParamStore,
}

impl<'a> Eager<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Eager { params }
    }
}

impl<'a> Backend for Eager<'a> {
    type Var = Cow<'a, Tensor>;

    fn constant(&mut self, value: Tensor) -> Self::Var {
        Cow::Owned(value)
    }
    fn param(&mut self, id: ParamId) -> Self::Var {
        Cow::Borrowed(self.params.value(id))
    }
    fn value<'v>(&'v self, var: &'v Self::Var) -> &'v Tensor {
        var
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.zip_map(b, "add", |p, q| p + q)?))
    }
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.zip_map(b, "sub", |p, q| p - q)?))
    }
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.zip_map(b, "mul", |p, q| p * q)?))
    }
    fn add_row(&mut self, a: &Self::Var, row: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.add_row(row)?))
    }
    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.matmul(b)?))
    }
    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.map(|v| if v > 0.0 { v } else { 0.0 })))
    }
    fn relu_mask(&mut self, h: &Self::Var, v: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(h.zip_map(v, "relu_mask_stop_gradient", |h, v| {
            if h > 0.0 {
                v
            } else {
                0.0
            }
        })?))
    }
    fn exp(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.map(math::exp)))
    }
    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.map(math::tanh)))
    }
    fn square(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.map(|v| v * v)))
    }
    fn scale(&mut self, a: &Self::Var, c: f64) -> Result<Self::Var> {
        Ok(Cow::Owned(a.scale(c)))
    }
    fn sum_cols(&mut self, a: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(a.sum_cols()?))
    }
    fn slice(&mut self, a: &Self::Var, cols: &[usize]) -> Result<Self::Var> {
        Ok(Cow::Owned(a.select_cols(cols)?))
    }
    fn concat(&mut self, a: &Self::Var, left: &[usize], b: &Self::Var, right: &[usize]) -> Result<Self::Var> {
        Ok(Cow::Owned(Tensor::merge_cols(a, left, b, right)?))
    }
}

/// Records onto a [`Graph`], snapshotting parameters from a store.
pub struct Recorder<'g, 'a> {
    pub graph: &'g mut Graph,
    params: &'a ParamStore,
}

impl<'g, 'a> Recorder<'g, 'a> {
    pub fn new(graph: &'g mut Graph, params: &'a ParamStore) -> Self {
        Recorder { graph, params }
    }
}

impl Backend for Recorder<'_, '_> {
    type Var = NodeId;

    fn constant(&mut self, value: Tensor) -> NodeId {
        self.graph.constant(value)
    }
    fn param(&mut self, id: ParamId) -> NodeId {
        self.graph.param(self.params, id)
    }
    fn value<'v>(&'v self, var: &'v NodeId) -> &'v Tensor {
        self.graph.value(*var)
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.graph.add(*a, *b)
    }
    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.graph.sub(*a, *b)
    }
    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.graph.mul(*a, *b)
    }
    fn add_row(&mut self, a: &NodeId, row: &NodeId) -> Result<NodeId> {
        self.graph.add_row(*a, *row)
    }
    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.graph.matmul(*a, *b)
    }
    fn relu(&mut self, a: &NodeId) -> Result<NodeId> {
        self.graph.relu(*a)
    }
    fn relu_mask(&mut self, h: &NodeId, v: &NodeId) -> Result<NodeId> {
        self.graph.relu_mask(*h, *v)
    }
    fn exp(&mut self, a: &NodeId) -> Result<NodeId> {
        self.graph.exp(*a)
    }
    fn tanh(&mut self, a: &NodeId) -> Result<NodeId> {
        self.graph.tanh(*a)
    }
    fn square(&mut self, a: &NodeId) -> Result<NodeId> {
        self.graph.square(*a)
    }
    fn scale(&mut self, a: &NodeId, c: f64) -> Result<NodeId> {
        self.graph.scale(*a, c)
    }
    fn sum_cols(&mut self, a: &NodeId) -> Result<NodeId> {
        self.graph.sum_cols(*a)
    }
    fn slice(&mut self, a: &NodeId, cols: &[usize]) -> Result<NodeId> {
        self.graph.slice(*a, cols)
    }
    fn concat(&mut self, a: &NodeId, left: &[usize], b: &NodeId, right: &[usize]) -> Result<NodeId> {
        self.graph.concat(*a, left, *b, right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> Tensor {
        Tensor::row(values)
    }

    #[test]
    fn add_and_relu_primals() {
        let mut g = Graph::new();
        let a = g.constant(v(&[1.0, 2.0]));
        let b = g.constant(v(&[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let c = g.constant(v(&[-1.0, 2.0]));
        let r = g.relu(c).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_primal_against_hand_product() {
        // 2×3 times the first column of I₃ padded into 3×1.
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = g.constant(Tensor::matrix(3, 1, vec![0.0, 1.0, 0.0]).unwrap());
        let p = g.matmul(a, e).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(v(&[1.0, 2.0]));
        let b = g.constant(v(&[1.0, 2.0, 3.0]));
        match g.add(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![1, 2]);
                assert_eq!(rhs, vec![1, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn square_sum_gradient() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::row(&[3.0]));
        let mut g = Graph::new();
        let x = g.param(&store, p);
        let sq = g.square(x).unwrap();
        let root = g.sum(sq).unwrap();
        g.backward(root, &mut store).unwrap();
        assert_eq!(store.get(p).grad.data(), &[6.0]);
    }

    #[test]
    fn product_rule_and_accumulation() {
        let mut store = ParamStore::new();
        let p1 = store.register("p1", Tensor::scalar(2.0));
        let p2 = store.register("p2", Tensor::scalar(5.0));
        let mut g = Graph::new();
        let a = g.param(&store, p1);
        let b = g.param(&store, p2);
        let root = g.mul(a, b).unwrap();
        g.backward(root, &mut store).unwrap();
        assert_eq!(store.get(p1).grad.item(), 5.0);
        assert_eq!(store.get(p2).grad.item(), 2.0);
        g.backward(root, &mut store).unwrap();
        assert_eq!(store.get(p1).grad.item(), 10.0);
        store.zero_grad();
        assert!(store.iter().all(|p| p.grad.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        let a = g.leaf(v(&[1.0, 2.0]));
        assert!(matches!(g.backward(a, &mut store), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn relu_mask_blocks_gradient_to_mask_input() {
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        let h = g.leaf(v(&[-1.0, 2.0]));
        let t = g.leaf(v(&[5.0, 7.0]));
        let m = g.relu_mask(h, t).unwrap();
        let root = g.sum(m).unwrap();
        let grads = g.backward(root, &mut store).unwrap();
        assert!(grads.wrt(h).is_none());
        assert_eq!(grads.wrt(t).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn inputs_precede_outputs() {
        let mut g = Graph::new();
        let a = g.leaf(v(&[1.0]));
        let b = g.exp(a).unwrap();
        let c = g.mul(a, b).unwrap();
        for id in [b, c] {
            assert!(g.inputs(id).iter().all(|i| i.0 < id.0));
        }
    }

    #[test]
    fn grad_check_half_norm_squared() {
        let mut store = ParamStore::new();
        store.register("p", Tensor::row(&[0.3, -1.2, 2.5]));
        let err = grad_check(&mut store, 1e-5, |g, s| {
            let p = g.param(s, ParamId(0));
            let n = g.l2_norm_sq(p)?;
            g.scale(n, 0.5)
        })
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }
}
