//! Reverse-mode differentiation over a closed op set.
//!
//! A [`Graph`] is a define-by-run tape: building an op computes its forward
//! value immediately; [`Graph::backward`] then walks the tape in reverse and
//! accumulates `d(root)/d(param)` for every parameter leaf. The op set is
//! fixed (matrix-vector product, add, elementwise multiply/tanh/sigmoid,
//! one-minus, negate, concat, embedding row lookup, softmax, log,
//! log-softmax, dot, stack, scalar-vector product, pick, sum) — exactly what
//! the encoder/attention/decoder stack and its loss need, nothing more.
//!
//! Parameters live outside the graph in a [`ParamSet`]; leaves borrow them,
//! so building a graph never copies weight matrices.

use crate::error::{Error, Result};
use crate::numerics::tensor::{log_softmax_slice, softmax_slice, Tensor};

/// Handle to one named parameter tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
///
/// Order is creation order and is part of the format contract: checkpoints
/// and gradient stores are aligned to it.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(self.tensors.iter())
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }
}

/// Per-parameter gradients aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamSet) -> GradStore {
        GradStore {
            grads: params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    /// `self += other`, entry-wise.
    pub fn accumulate(&mut self, other: &GradStore) {
        debug_assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut() {
            g.scale(c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Value {
    Param(usize),
    Owned(Tensor),
}

enum Op {
    Leaf,
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Neg(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    EmbedRow { table: NodeId, row: usize },
    Softmax(NodeId),
    Log(NodeId),
    LogSoftmax(NodeId),
    Dot(NodeId, NodeId),
    Stack(Vec<NodeId>),
    ScalarMul { s: NodeId, v: NodeId },
    Pick { v: NodeId, idx: usize },
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Value,
}

/// Define-by-run tape over a borrowed [`ParamSet`].
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_leaf: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Graph<'p> {
        Graph {
            params,
            nodes: Vec::new(),
            param_leaf: vec![None; params.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Param(i) => &self.params.tensors[*i],
            Value::Owned(t) => t,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that borrows a parameter; memoized per graph.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_leaf[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Param(id.0),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_leaf[id.0] = Some(n);
        n
    }

    /// Constant leaf (no gradient flows into it).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// Matrix-vector product: `[r,c] x [c] -> [r]`.
    pub fn mat_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (rows, cols) = match self.value(m).shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Shape {
                    op: "mat_vec",
                    lhs: s.to_vec(),
                    rhs: self.value(v).shape().to_vec(),
                })
            }
        };
        if self.value(v).shape() != [cols] {
            return Err(Error::Shape {
                op: "mat_vec",
                lhs: vec![rows, cols],
                rhs: self.value(v).shape().to_vec(),
            });
        }
        let mv = self.value(m).data();
        let vv = self.value(v).data();
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &mv[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for c in 0..cols {
                acc += row[c] * vv[c];
            }
            out[r] = acc;
        }
        Ok(self.push(Op::MatVec(m, v), Tensor::vector(&out)))
    }

    fn binary_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(Error::Shape {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::from_vec(&shape, out)?))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::from_vec(&shape, out)?))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| f(*x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(op, Tensor::from_vec(&shape, out).expect("shape preserved"))
    }

    /// Elementwise `1 - x`.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    /// Elementwise natural log; all inputs must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument {
                op: "log",
                msg: "non-positive input".into(),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Concatenation of 1-D nodes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: "no parts".into(),
            });
        }
        let mut out = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.shape().len() != 1 {
                return Err(Error::InvalidArgument {
                    op: "concat",
                    msg: format!("rank-1 parts required, got shape {:?}", t.shape()),
                });
            }
            out.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(&out)))
    }

    /// Row lookup into a rank-2 node (embedding).
    pub fn embed_row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let (rows, _cols) = self.value(table).dims2()?;
        if row >= rows {
            return Err(Error::InvalidArgument {
                op: "embed_row",
                msg: format!("row {row} out of range for {rows} rows"),
            });
        }
        let out = Tensor::vector(self.value(table).row(row));
        Ok(self.push(Op::EmbedRow { table, row }, out))
    }

    /// Stable softmax over a non-empty 1-D node.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_vector("softmax", a)?;
        let out = softmax_slice(self.value(a).data());
        Ok(self.push(Op::Softmax(a), Tensor::vector(&out)))
    }

    /// Stable log-softmax over a non-empty 1-D node.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_vector("log_softmax", a)?;
        let out = log_softmax_slice(self.value(a).data());
        Ok(self.push(Op::LogSoftmax(a), Tensor::vector(&out)))
    }

    fn check_vector(&self, op: &'static str, a: NodeId) -> Result<()> {
        let t = self.value(a);
        if t.shape().len() != 1 || t.is_empty() {
            return Err(Error::InvalidArgument {
                op,
                msg: format!("non-empty rank-1 input required, got {:?}", t.shape()),
            });
        }
        Ok(())
    }

    /// Inner product of two equal-length 1-D nodes; scalar result.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("dot", a, b)?;
        self.check_vector("dot", a)?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(s)))
    }

    /// Stack scalar nodes into a 1-D node.
    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "stack",
                msg: "no parts".into(),
            });
        }
        let mut out = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            if t.len() != 1 {
                return Err(Error::InvalidArgument {
                    op: "stack",
                    msg: format!("scalar parts required, got shape {:?}", t.shape()),
                });
            }
            out.push(t.item());
        }
        Ok(self.push(Op::Stack(parts.to_vec()), Tensor::vector(&out)))
    }

    /// Scalar times tensor.
    pub fn scalar_mul(&mut self, s: NodeId, v: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape {
                op: "scalar_mul",
                lhs: self.value(s).shape().to_vec(),
                rhs: self.value(v).shape().to_vec(),
            });
        }
        let c = self.value(s).item();
        let out: Vec<f64> = self.value(v).data().iter().map(|x| c * x).collect();
        let shape = self.value(v).shape().to_vec();
        Ok(self.push(Op::ScalarMul { s, v }, Tensor::from_vec(&shape, out)?))
    }

    /// One element of a 1-D node as a scalar.
    pub fn pick(&mut self, v: NodeId, idx: usize) -> Result<NodeId> {
        self.check_vector("pick", v)?;
        let t = self.value(v);
        if idx >= t.len() {
            return Err(Error::InvalidArgument {
                op: "pick",
                msg: format!("index {idx} out of range for length {}", t.len()),
            });
        }
        let val = t.data()[idx];
        Ok(self.push(Op::Pick { v, idx }, Tensor::scalar(val)))
    }

    /// Sum of all entries; scalar result.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Forward value of `root` plus `d(root)/d(param)` for every parameter
    /// reachable from it. `root` must be scalar.
    pub fn evaluate_and_backward(&self, root: NodeId) -> Result<(f64, GradStore)> {
        let grads = self.backward(root)?;
        Ok((self.value(root).item(), grads))
    }

    /// Reverse pass seeding `d(root)/d(root) = 1`.
    pub fn backward(&self, root: NodeId) -> Result<GradStore> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument {
                op: "backward",
                msg: format!(
                    "root must be scalar, got shape {:?}",
                    self.value(root).shape()
                ),
            });
        }
        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[root.0] = Some(Tensor::scalar(1.0));
        let mut param_grads = GradStore::zeros_like(self.params);

        for i in (0..=root.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(p) = &node.value {
                        param_grads.grads[*p].add_assign(&g);
                    }
                }
                Op::MatVec(m, v) => {
                    let (rows, cols) = self.value(*m).dims2().expect("validated at build");
                    let mval = self.value(*m).data();
                    let vval = self.value(*v).data();
                    let gd = g.data();
                    {
                        let gm = grad_slot(&mut node_grads, *m, &[rows, cols]);
                        let gmd = gm.data_mut();
                        for r in 0..rows {
                            let gr = gd[r];
                            let row = &mut gmd[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                row[c] += gr * vval[c];
                            }
                        }
                    }
                    let gv = grad_slot(&mut node_grads, *v, &[cols]);
                    let gvd = gv.data_mut();
                    for r in 0..rows {
                        let gr = gd[r];
                        let row = &mval[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gvd[c] += gr * row[c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(self, &mut node_grads, *a, g.data(), |_, gi| gi);
                    accumulate(self, &mut node_grads, *b, g.data(), |_, gi| gi);
                }
                Op::Mul(a, b) => {
                    let av: Vec<f64> = self.value(*a).data().to_vec();
                    let bv: Vec<f64> = self.value(*b).data().to_vec();
                    accumulate(self, &mut node_grads, *a, g.data(), |k, gi| gi * bv[k]);
                    accumulate(self, &mut node_grads, *b, g.data(), |k, gi| gi * av[k]);
                }
                Op::OneMinus(a) | Op::Neg(a) => {
                    accumulate(self, &mut node_grads, *a, g.data(), |_, gi| -gi);
                }
                Op::Tanh(a) => {
                    let y: Vec<f64> = match &node.value {
                        Value::Owned(t) => t.data().to_vec(),
                        Value::Param(_) => unreachable!("tanh output is owned"),
                    };
                    accumulate(self, &mut node_grads, *a, g.data(), |k, gi| {
                        gi * (1.0 - y[k] * y[k])
                    });
                }
                Op::Sigmoid(a) => {
                    let y: Vec<f64> = match &node.value {
                        Value::Owned(t) => t.data().to_vec(),
                        Value::Param(_) => unreachable!("sigmoid output is owned"),
                    };
                    accumulate(self, &mut node_grads, *a, g.data(), |k, gi| {
                        gi * y[k] * (1.0 - y[k])
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let shape = self.value(*p).shape().to_vec();
                        let slot = grad_slot(&mut node_grads, *p, &shape);
                        let sd = slot.data_mut();
                        for k in 0..n {
                            sd[k] += g.data()[offset + k];
                        }
                        offset += n;
                    }
                }
                Op::EmbedRow { table, row } => {
                    let (rows, cols) = self.value(*table).dims2().expect("validated at build");
                    let slot = grad_slot(&mut node_grads, *table, &[rows, cols]);
                    let sd = slot.row_mut(*row);
                    for (k, gi) in g.data().iter().enumerate() {
                        sd[k] += gi;
                    }
                }
                Op::Softmax(a) => {
                    let y: Vec<f64> = match &node.value {
                        Value::Owned(t) => t.data().to_vec(),
                        Value::Param(_) => unreachable!("softmax output is owned"),
                    };
                    let dot: f64 = g.data().iter().zip(y.iter()).map(|(gi, yi)| gi * yi).sum();
                    accumulate(self, &mut node_grads, *a, g.data(), |k, gi| {
                        y[k] * (gi - dot)
                    });
                }
                Op::Log(a) => {
                    let x: Vec<f64> = self.value(*a).data().to_vec();
                    accumulate(self, &mut node_grads, *a, g.data(), |k, gi| gi / x[k]);
                }
                Op::LogSoftmax(a) => {
                    let y: Vec<f64> = match &node.value {
                        Value::Owned(t) => t.data().to_vec(),
                        Value::Param(_) => unreachable!("log_softmax output is owned"),
                    };
                    let gsum: f64 = g.data().iter().sum();
                    accumulate(self, &mut node_grads, *a, g.data(), |k, gi| {
                        gi - y[k].exp() * gsum
                    });
                }
                Op::Dot(a, b) => {
                    let g0 = g.item();
                    let av: Vec<f64> = self.value(*a).data().to_vec();
                    let bv: Vec<f64> = self.value(*b).data().to_vec();
                    let ga: Vec<f64> = bv.iter().map(|x| g0 * x).collect();
                    let gb: Vec<f64> = av.iter().map(|x| g0 * x).collect();
                    accumulate(self, &mut node_grads, *a, &ga, |_, gi| gi);
                    accumulate(self, &mut node_grads, *b, &gb, |_, gi| gi);
                }
                Op::Stack(parts) => {
                    for (k, p) in parts.iter().enumerate() {
                        let slot = grad_slot(&mut node_grads, *p, &[1]);
                        slot.data_mut()[0] += g.data()[k];
                    }
                }
                Op::ScalarMul { s, v } => {
                    let c = self.value(*s).item();
                    let vv: Vec<f64> = self.value(*v).data().to_vec();
                    let gdot: f64 = g.data().iter().zip(vv.iter()).map(|(gi, x)| gi * x).sum();
                    {
                        let slot = grad_slot(&mut node_grads, *s, &[1]);
                        slot.data_mut()[0] += gdot;
                    }
                    accumulate(self, &mut node_grads, *v, g.data(), |_, gi| gi * c);
                }
                Op::Pick { v, idx } => {
                    let shape = self.value(*v).shape().to_vec();
                    let slot = grad_slot(&mut node_grads, *v, &shape);
                    slot.data_mut()[*idx] += g.item();
                }
                Op::Sum(a) => {
                    let g0 = g.item();
                    let shape = self.value(*a).shape().to_vec();
                    let slot = grad_slot(&mut node_grads, *a, &shape);
                    for x in slot.data_mut() {
                        *x += g0;
                    }
                }
            }
        }
        Ok(param_grads)
    }
}

fn grad_slot<'g>(
    node_grads: &'g mut [Option<Tensor>],
    id: NodeId,
    shape: &[usize],
) -> &'g mut Tensor {
    let slot = &mut node_grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape));
    }
    slot.as_mut().expect("just filled")
}

/// Accumulate `f(k, g[k])` into the gradient of `target`, elementwise.
fn accumulate(
    graph: &Graph<'_>,
    node_grads: &mut [Option<Tensor>],
    target: NodeId,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    let shape = graph.value(target).shape().to_vec();
    let slot = grad_slot(node_grads, target, &shape);
    for (k, out) in slot.data_mut().iter_mut().enumerate() {
        *out += f(k, g[k]);
    }
}

/// Central finite differences of `loss` with respect to every parameter value
/// (step `h`), evaluated by forward passes only. Independent of the reverse
/// pass, so it serves as its oracle.
pub fn finite_diff_gradients<F>(params: &mut ParamSet, h: f64, mut loss: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let shape = params.tensors[i].shape().to_vec();
        let mut grad = Tensor::zeros(&shape);
        for k in 0..params.tensors[i].len() {
            let orig = params.tensors[i].data()[k];
            params.tensors[i].data_mut()[k] = orig + h;
            let up = loss(params)?;
            params.tensors[i].data_mut()[k] = orig - h;
            let down = loss(params)?;
            params.tensors[i].data_mut()[k] = orig;
            grad.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest scaled error between analytic and numeric gradients:
/// `|a - n| / max(1, |a|, |n|)` over all entries. For O(1) gradients this is
/// the relative error; for tiny gradients it degrades to an absolute check.
pub fn max_scaled_error(analytic: &GradStore, numeric: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for ((_, a), n) in analytic.iter().zip(numeric.iter()) {
        for (x, y) in a.data().iter().zip(n.data().iter()) {
            let denom = 1.0_f64.max(x.abs()).max(y.abs());
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn sum_of_matrix_param_has_all_ones_grad() {
        let mut params = ParamSet::new();
        let w = params.add("w", rand_tensor(&mut Rng::new(1), &[2, 2]));
        let mut g = Graph::new(&params);
        let leaf = g.param(w);
        let root = g.sum(leaf);
        let (_, grads) = g.evaluate_and_backward(root).unwrap();
        assert_eq!(grads.get(w).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn tanh_at_zero_has_unit_grad() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::scalar(0.0));
        let mut g = Graph::new(&params);
        let leaf = g.param(x);
        let y = g.tanh(leaf);
        let (val, grads) = g.evaluate_and_backward(y).unwrap();
        assert_eq!(val, 0.0);
        assert_eq!(grads.get(x).data(), &[1.0]);
    }

    #[test]
    fn mat_vec_shape_error_names_op_and_shapes() {
        let mut params = ParamSet::new();
        let m = params.add("m", Tensor::zeros(&[2, 3]));
        let v = params.add("v", Tensor::zeros(&[4]));
        let mut g = Graph::new(&params);
        let (ml, vl) = (g.param(m), g.param(v));
        let err = g.mat_vec(ml, vl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mat_vec") && msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn softmax_rejects_empty() {
        let mut params = ParamSet::new();
        let v = params.add("v", Tensor::from_vec(&[0], vec![]).unwrap());
        let mut g = Graph::new(&params);
        let leaf = g.param(v);
        assert!(g.softmax(leaf).is_err());
    }

    #[test]
    fn graph_softmax_sums_to_one_and_positive() {
        let mut rng = Rng::new(11);
        let mut params = ParamSet::new();
        let v = params.add("v", rand_tensor(&mut rng, &[9]));
        let mut g = Graph::new(&params);
        let leaf = g.param(v);
        let sm = g.softmax(leaf).unwrap();
        let total: f64 = g.value(sm).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(g.value(sm).data().iter().all(|p| *p > 0.0));
    }

    /// Random three-layer composition checked against central finite
    /// differences at h = 1e-5 in double precision.
    #[test]
    fn three_layer_composition_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = Rng::new(1000 + seed);
            let mut params = ParamSet::new();
            let w1 = params.add("w1", rand_tensor(&mut rng, &[4, 3]));
            let b1 = params.add("b1", rand_tensor(&mut rng, &[4]));
            let w2 = params.add("w2", rand_tensor(&mut rng, &[5, 4]));
            let b2 = params.add("b2", rand_tensor(&mut rng, &[5]));
            let w3 = params.add("w3", rand_tensor(&mut rng, &[2, 5]));
            let x = params.add("x", rand_tensor(&mut rng, &[3]));

            let build = |params: &ParamSet| -> crate::error::Result<(f64, Option<GradStore>)> {
                let mut g = Graph::new(params);
                let (w1n, b1n, w2n, b2n, w3n, xn) = (
                    g.param(w1), g.param(b1), g.param(w2), g.param(b2), g.param(w3), g.param(x),
                );
                let h1 = g.mat_vec(w1n, xn)?;
                let h1 = g.add(h1, b1n)?;
                let h1 = g.tanh(h1);
                let h2 = g.mat_vec(w2n, h1)?;
                let h2 = g.add(h2, b2n)?;
                let h2 = g.sigmoid(h2);
                let h3 = g.mat_vec(w3n, h2)?;
                let sm = g.softmax(h3)?;
                let lg = g.log(sm)?;
                let root = g.sum(lg);
                let (v, grads) = g.evaluate_and_backward(root)?;
                Ok((v, Some(grads)))
            };

            let (_, grads) = build(&params).unwrap();
            let numeric =
                finite_diff_gradients(&mut params, 1e-5, |p| build(p).map(|(v, _)| v)).unwrap();
            let err = max_scaled_error(&grads.unwrap(), &numeric);
            assert!(err < 1e-6, "seed {seed}: error {err}");
        }
    }

    /// Every op of the closed set, 50 random instances each, against the
    /// finite-difference oracle.
    #[test]
    fn per_op_gradients_match_finite_differences() {
        #[allow(clippy::type_complexity)]
        let cases: Vec<(&str, fn(&mut Graph, &[NodeId]) -> NodeId, Vec<Vec<usize>>)> = vec![
            ("mat_vec", |g, n| {
                let y = g.mat_vec(n[0], n[1]).unwrap();
                g.sum(y)
            }, vec![vec![3, 4], vec![4]]),
            ("add", |g, n| {
                let y = g.add(n[0], n[1]).unwrap();
                let s = g.tanh(y);
                g.sum(s)
            }, vec![vec![5], vec![5]]),
            ("mul", |g, n| {
                let y = g.mul(n[0], n[1]).unwrap();
                g.sum(y)
            }, vec![vec![5], vec![5]]),
            ("one_minus", |g, n| {
                let y = g.one_minus(n[0]);
                let z = g.mul(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![4], vec![4]]),
            ("neg", |g, n| {
                let y = g.neg(n[0]);
                let z = g.mul(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![4], vec![4]]),
            ("tanh", |g, n| {
                let y = g.tanh(n[0]);
                let z = g.mul(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![6], vec![6]]),
            ("sigmoid", |g, n| {
                let y = g.sigmoid(n[0]);
                let z = g.mul(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![6], vec![6]]),
            ("concat", |g, n| {
                let y = g.concat(&[n[0], n[1]]).unwrap();
                let t = g.tanh(y);
                g.sum(t)
            }, vec![vec![3], vec![2]]),
            ("embed_row", |g, n| {
                let y = g.embed_row(n[0], 1).unwrap();
                let z = g.mul(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![3, 4], vec![4]]),
            ("softmax", |g, n| {
                let y = g.softmax(n[0]).unwrap();
                let z = g.dot(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![5], vec![5]]),
            ("log_softmax", |g, n| {
                let y = g.log_softmax(n[0]).unwrap();
                let z = g.dot(y, n[1]).unwrap();
                g.sum(z)
            }, vec![vec![5], vec![5]]),
            ("log", |g, n| {
                let s = g.sigmoid(n[0]);
                let y = g.log(s).unwrap();
                g.sum(y)
            }, vec![vec![4]]),
            ("dot", |g, n| g.dot(n[0], n[1]).unwrap(), vec![vec![5], vec![5]]),
            ("stack_pick", |g, n| {
                let a = g.pick(n[0], 0).unwrap();
                let b = g.pick(n[0], 2).unwrap();
                let st = g.stack(&[a, b]).unwrap();
                let t = g.tanh(st);
                g.sum(t)
            }, vec![vec![4]]),
            ("scalar_mul", |g, n| {
                let s = g.pick(n[0], 1).unwrap();
                let y = g.scalar_mul(s, n[1]).unwrap();
                g.sum(y)
            }, vec![vec![3], vec![6]]),
        ];

        for (name, build, shapes) in cases {
            for inst in 0..50 {
                let mut rng = Rng::new(42 + inst);
                let mut params = ParamSet::new();
                let ids: Vec<ParamId> = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| params.add(format!("p{i}"), rand_tensor(&mut rng, s)))
                    .collect();
                let run = |params: &ParamSet| -> (f64, GradStore) {
                    let mut g = Graph::new(params);
                    let nodes: Vec<NodeId> = ids.iter().map(|id| g.param(*id)).collect();
                    let root = build(&mut g, &nodes);
                    g.evaluate_and_backward(root).unwrap()
                };
                let (_, analytic) = run(&params);
                let numeric =
                    finite_diff_gradients(&mut params, 1e-5, |p| Ok(run(p).0)).unwrap();
                let err = max_scaled_error(&analytic, &numeric);
                assert!(err < 1e-6, "op {name} instance {inst}: error {err}");
            }
        }
    }

    #[test]
    fn param_leaves_are_memoized_and_grads_accumulate() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::vector(&[2.0, 3.0]));
        let mut g = Graph::new(&params);
        let a = g.param(x);
        let b = g.param(x);
        assert_eq!(a, b);
        // root = sum(x .* x) => grad = 2x
        let sq = g.mul(a, b).unwrap();
        let root = g.sum(sq);
        let (v, grads) = g.evaluate_and_backward(root).unwrap();
        assert_eq!(v, 13.0);
        assert_eq!(grads.get(x).data(), &[4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::vector(&[1.0, 2.0]));
        let mut g = Graph::new(&params);
        let leaf = g.param(x);
        assert!(g.backward(leaf).is_err());
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::vector(&[3.0, 4.0]));
        let mut g = GradStore::zeros_like(&params);
        g.get_mut(x).data_mut().copy_from_slice(&[3.0, 4.0]);
        let before = g.clip_global_norm(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        // below the threshold: untouched
        let after = g.clip_global_norm(10.0);
        assert!((after - 1.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
