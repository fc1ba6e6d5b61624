use super::params::{ParamGrads, ParamId, ParameterRegistry};
use super::{DiffError, Tensor};

/// Index of a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive recorded on the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Param(ParamId),
    Row(usize),
    Slice { start: usize, len: usize },
    MatVec,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Concat,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Dropout(Vec<f64>),
    MaxPool,
    WeightedSum,
    Dot,
    LogSumExp,
    Sum,
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Row(_) => "row",
            Op::Slice { .. } => "slice",
            Op::MatVec => "matvec",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Concat => "concat",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Softmax => "softmax",
            Op::Dropout(_) => "dropout",
            Op::MaxPool => "maxpool",
            Op::WeightedSum => "weighted_sum",
            Op::Dot => "dot",
            Op::LogSumExp => "logsumexp",
            Op::Sum => "sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<NodeId>,
}

/// Define-by-run tape over a borrowed parameter registry.
///
/// Each parameter appears as at most one leaf, so every use of it
/// accumulates into the same gradient slot.
pub struct Graph<'p> {
    registry: &'p ParameterRegistry,
    nodes: Vec<Node>,
    param_leaf: Vec<Option<NodeId>>,
}

fn shape_err(op: &Op, shapes: Vec<Vec<usize>>) -> DiffError {
    DiffError::ShapeMismatch {
        op: op.tag(),
        shapes,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp`; `-∞` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<'p> Graph<'p> {
    pub fn new(registry: &'p ParameterRegistry) -> Self {
        Graph {
            registry,
            nodes: Vec::new(),
            param_leaf: vec![None; registry.len()],
        }
    }

    pub fn registry(&self) -> &'p ParameterRegistry {
        self.registry
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

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<NodeId, DiffError> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op: op.tag() });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, inputs });
        Ok(id)
    }

    fn shape(&self, id: NodeId) -> Vec<usize> {
        self.nodes[id.0].value.shape().to_vec()
    }

    /// Constant leaf that never receives a parameter gradient.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId, DiffError> {
        self.push(Op::Input, Vec::new(), value)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<NodeId, DiffError> {
        self.input(Tensor::scalar(value))
    }

    /// Leaf for a registered parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_leaf[id.0] {
            return node;
        }
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: self.registry.value(id).clone(),
            op: Op::Param(id),
            inputs: Vec::new(),
        });
        self.param_leaf[id.0] = Some(node);
        node
    }

    /// Generic entry point: applies `op` to `inputs` after checking shapes.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        let shapes = || inputs.iter().map(|&i| self.shape(i)).collect::<Vec<_>>();
        fn unary<'g>(g: &'g Graph<'_>, op: &Op, inputs: &[NodeId]) -> Result<&'g Tensor, DiffError> {
            match inputs {
                [a] => Ok(g.value(*a)),
                _ => Err(shape_err(op, inputs.iter().map(|&i| g.shape(i)).collect())),
            }
        }
        let value = match &op {
            Op::Input | Op::Param(_) => return Err(shape_err(&op, shapes())),
            Op::Row(r) => {
                let m = unary(self, &op, inputs)?;
                if m.rank() != 2 || *r >= m.shape()[0] {
                    return Err(shape_err(&op, shapes()));
                }
                Tensor::vector(m.row(*r).to_vec())
            }
            Op::Slice { start, len } => {
                let v = unary(self, &op, inputs)?;
                if v.rank() != 1 || start + len > v.len() || *len == 0 {
                    return Err(shape_err(&op, shapes()));
                }
                Tensor::vector(v.data()[*start..start + len].to_vec())
            }
            Op::MatVec => {
                let (w, x) = match inputs {
                    [w, x] => (self.value(*w), self.value(*x)),
                    _ => return Err(shape_err(&op, shapes())),
                };
                if w.rank() != 2 || x.rank() != 1 || w.shape()[1] != x.len() {
                    return Err(shape_err(&op, shapes()));
                }
                let cols = w.shape()[1];
                let xs = x.data();
                let out = w
                    .data()
                    .chunks_exact(cols)
                    .map(|row| row.iter().zip(xs).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::vector(out)
            }
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = match inputs {
                    [a, b] => (self.value(*a), self.value(*b)),
                    _ => return Err(shape_err(&op, shapes())),
                };
                if a.shape() != b.shape() {
                    return Err(shape_err(&op, shapes()));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add => |x, y| x + y,
                    Op::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::Scale(c) => {
                let a = unary(self, &op, inputs)?;
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| v * c).collect())
            }
            Op::Concat => {
                if inputs.is_empty() || inputs.iter().any(|&i| self.value(i).rank() > 1) {
                    return Err(shape_err(&op, shapes()));
                }
                let mut data = Vec::new();
                for &i in inputs {
                    data.extend_from_slice(self.value(i).data());
                }
                Tensor::vector(data)
            }
            Op::Sigmoid | Op::Tanh | Op::Relu => {
                let a = unary(self, &op, inputs)?;
                let f: fn(f64) -> f64 = match op {
                    Op::Sigmoid => sigmoid,
                    Op::Tanh => f64::tanh,
                    _ => |x: f64| x.max(0.0),
                };
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect())
            }
            Op::Softmax => {
                let a = unary(self, &op, inputs)?;
                if a.rank() != 1 || a.is_empty() {
                    return Err(shape_err(&op, shapes()));
                }
                Tensor::vector(softmax(a.data()))
            }
            Op::Dropout(mask) => {
                let a = unary(self, &op, inputs)?;
                if mask.len() != a.len() {
                    return Err(shape_err(&op, vec![a.shape().to_vec(), vec![mask.len()]]));
                }
                let data = a.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::MaxPool => {
                let first = match inputs.first() {
                    Some(&f) => self.value(f),
                    None => return Err(shape_err(&op, shapes())),
                };
                if first.rank() != 1 || inputs.iter().any(|&i| self.value(i).shape() != first.shape()) {
                    return Err(shape_err(&op, shapes()));
                }
                let mut out = first.data().to_vec();
                for &i in &inputs[1..] {
                    for (o, v) in out.iter_mut().zip(self.value(i).data()) {
                        if *v > *o {
                            *o = *v;
                        }
                    }
                }
                Tensor::vector(out)
            }
            Op::WeightedSum => {
                let (weights, items) = match inputs.split_first() {
                    Some((w, rest)) if !rest.is_empty() => (self.value(*w), rest),
                    _ => return Err(shape_err(&op, shapes())),
                };
                let width = self.value(items[0]).shape().to_vec();
                if weights.rank() != 1
                    || weights.len() != items.len()
                    || width.len() != 1
                    || items.iter().any(|&i| self.value(i).shape() != width.as_slice())
                {
                    return Err(shape_err(&op, shapes()));
                }
                let mut out = vec![0.0; width[0]];
                for (&w, &i) in weights.data().iter().zip(items) {
                    for (o, v) in out.iter_mut().zip(self.value(i).data()) {
                        *o += w * v;
                    }
                }
                Tensor::vector(out)
            }
            Op::Dot => {
                let (a, b) = match inputs {
                    [a, b] => (self.value(*a), self.value(*b)),
                    _ => return Err(shape_err(&op, shapes())),
                };
                if a.rank() != 1 || a.shape() != b.shape() {
                    return Err(shape_err(&op, shapes()));
                }
                Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
            }
            Op::LogSumExp => {
                let a = unary(self, &op, inputs)?;
                if a.rank() != 1 || a.is_empty() {
                    return Err(shape_err(&op, shapes()));
                }
                Tensor::scalar(log_sum_exp(a.data()))
            }
            Op::Sum => {
                let a = unary(self, &op, inputs)?;
                Tensor::scalar(a.data().iter().sum())
            }
        };
        self.push(op, inputs.to_vec(), value)
    }

    pub fn row(&mut self, matrix: NodeId, r: usize) -> Result<NodeId, DiffError> {
        self.apply(Op::Row(r), &[matrix])
    }

    pub fn slice(&mut self, v: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        self.apply(Op::Slice { start, len }, &[v])
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::MatVec, &[w, x])
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, DiffError> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        self.apply(Op::Concat, parts)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Relu, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Softmax, &[a])
    }

    /// Multiplies by an externally drawn mask (see [`super::dropout_mask`]).
    pub fn dropout(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId, DiffError> {
        self.apply(Op::Dropout(mask), &[a])
    }

    /// Elementwise max over a sequence of equally sized vectors.
    pub fn max_pool(&mut self, items: &[NodeId]) -> Result<NodeId, DiffError> {
        self.apply(Op::MaxPool, items)
    }

    /// `sum_k weights[k] * items[k]`.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId, DiffError> {
        let mut inputs = Vec::with_capacity(items.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(items);
        self.apply(Op::WeightedSum, &inputs)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Dot, &[a, b])
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::LogSumExp, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sum, &[a])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 || loss_value.rank() > 1 {
            return Err(DiffError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &out_grad, &mut grads);
            grads[idx] = Some(out_grad);
        }

        let mut params = ParamGrads::zeros_like(self.registry);
        for (p, leaf) in self.param_leaf.iter().enumerate() {
            if let Some(leaf) = leaf {
                if let Some(g) = &grads[leaf.0] {
                    params.get_mut(ParamId(p)).data_mut().copy_from_slice(g);
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], graph: &Graph, id: NodeId) -> &'a mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; graph.nodes[id.0].value.len()])
        }
        let out = node.value.data();
        let ins = &node.inputs;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Row(r) => {
                let cols = self.nodes[ins[0].0].value.shape()[1];
                let dst = slot(grads, self, ins[0]);
                for (d, v) in dst[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                    *d += v;
                }
            }
            Op::Slice { start, len } => {
                let dst = slot(grads, self, ins[0]);
                for (d, v) in dst[*start..start + len].iter_mut().zip(g) {
                    *d += v;
                }
            }
            Op::MatVec => {
                let w = &self.nodes[ins[0].0].value;
                let x = self.nodes[ins[1].0].value.data();
                let cols = w.shape()[1];
                {
                    let dw = slot(grads, self, ins[0]);
                    for (row, &gi) in dw.chunks_exact_mut(cols).zip(g) {
                        if gi != 0.0 {
                            for (d, xv) in row.iter_mut().zip(x) {
                                *d += gi * xv;
                            }
                        }
                    }
                }
                let dx = slot(grads, self, ins[1]);
                for (row, &gi) in w.data().chunks_exact(cols).zip(g) {
                    if gi != 0.0 {
                        for (d, wv) in dx.iter_mut().zip(row) {
                            *d += gi * wv;
                        }
                    }
                }
            }
            Op::Add | Op::Sub => {
                let sign = if node.op == Op::Add { 1.0 } else { -1.0 };
                for (d, v) in slot(grads, self, ins[0]).iter_mut().zip(g) {
                    *d += v;
                }
                for (d, v) in slot(grads, self, ins[1]).iter_mut().zip(g) {
                    *d += sign * v;
                }
            }
            Op::Mul => {
                let a = self.nodes[ins[0].0].value.data();
                let b = self.nodes[ins[1].0].value.data();
                for ((d, v), bv) in slot(grads, self, ins[0]).iter_mut().zip(g).zip(b) {
                    *d += v * bv;
                }
                for ((d, v), av) in slot(grads, self, ins[1]).iter_mut().zip(g).zip(a) {
                    *d += v * av;
                }
            }
            Op::Scale(c) => {
                for (d, v) in slot(grads, self, ins[0]).iter_mut().zip(g) {
                    *d += c * v;
                }
            }
            Op::Concat => {
                let mut offset = 0;
                for &i in ins {
                    let n = self.nodes[i.0].value.len();
                    for (d, v) in slot(grads, self, i).iter_mut().zip(&g[offset..offset + n]) {
                        *d += v;
                    }
                    offset += n;
                }
            }
            Op::Sigmoid => {
                for ((d, v), y) in slot(grads, self, ins[0]).iter_mut().zip(g).zip(out) {
                    *d += v * y * (1.0 - y);
                }
            }
            Op::Tanh => {
                for ((d, v), y) in slot(grads, self, ins[0]).iter_mut().zip(g).zip(out) {
                    *d += v * (1.0 - y * y);
                }
            }
            Op::Relu => {
                let x = self.nodes[ins[0].0].value.data();
                for ((d, v), xv) in slot(grads, self, ins[0]).iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *d += v;
                    }
                }
            }
            Op::Softmax => {
                let inner: f64 = g.iter().zip(out).map(|(v, y)| v * y).sum();
                for ((d, v), y) in slot(grads, self, ins[0]).iter_mut().zip(g).zip(out) {
                    *d += y * (v - inner);
                }
            }
            Op::Dropout(mask) => {
                for ((d, v), m) in slot(grads, self, ins[0]).iter_mut().zip(g).zip(mask) {
                    *d += v * m;
                }
            }
            Op::MaxPool => {
                // the first input attaining the max receives the gradient
                for (k, (&y, &gk)) in out.iter().zip(g).enumerate() {
                    let winner = ins
                        .iter()
                        .copied()
                        .find(|i| self.nodes[i.0].value.data()[k] == y)
                        .expect("max is attained");
                    slot(grads, self, winner)[k] += gk;
                }
            }
            Op::WeightedSum => {
                let items = &ins[1..];
                let w = self.nodes[ins[0].0].value.data().to_vec();
                let dw: Vec<f64> = items
                    .iter()
                    .map(|i| self.nodes[i.0].value.data().iter().zip(g).map(|(x, v)| x * v).sum())
                    .collect();
                for (d, v) in slot(grads, self, ins[0]).iter_mut().zip(&dw) {
                    *d += v;
                }
                for (&i, wk) in items.iter().zip(&w) {
                    for (d, v) in slot(grads, self, i).iter_mut().zip(g) {
                        *d += wk * v;
                    }
                }
            }
            Op::Dot => {
                let gs = g[0];
                let a = self.nodes[ins[0].0].value.data();
                let b = self.nodes[ins[1].0].value.data();
                for (d, bv) in slot(grads, self, ins[0]).iter_mut().zip(b) {
                    *d += gs * bv;
                }
                for (d, av) in slot(grads, self, ins[1]).iter_mut().zip(a) {
                    *d += gs * av;
                }
            }
            Op::LogSumExp => {
                let probs = softmax(self.nodes[ins[0].0].value.data());
                for (d, p) in slot(grads, self, ins[0]).iter_mut().zip(probs) {
                    *d += g[0] * p;
                }
            }
            Op::Sum => {
                for d in slot(grads, self, ins[0]).iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to an intermediate node; `None`
    /// when the node does not influence the loss.
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}
