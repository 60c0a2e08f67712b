use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MtlError, Result};
use crate::tensor::{as_matrix_dims, matmul, Tensor};

/// Identifier of a trainable parameter, stable across tapes. Gradients come
/// back keyed by this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Index of a node on one particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Fused softmax + negative log likelihood of one class. `probs` is the
    /// cached softmax needed by the adjoint.
    SoftmaxCrossEntropy {
        logits: NodeId,
        class: usize,
        probs: Vec<f64>,
    },
    L1Loss {
        pred: NodeId,
        target: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Wengert-list reverse-mode tape. Nodes live in a flat vector; every parent
/// index is strictly smaller than its child's, so one reverse sweep visits
/// each node exactly once. All derivative accumulation is in fixed order,
/// which makes gradients bitwise reproducible.
///
/// Non-differentiable points (`abs` and `leaky_relu` at 0, the `l1_loss`
/// sign at 0) take the subgradient of the positive branch.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, NodeId)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Register a trainable leaf. The same `ParamId` may legally appear more
    /// than once on a tape; `backward` sums the contributions.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> NodeId {
        let node = self.push(Op::Leaf, value);
        self.params.push((id, node));
        node
    }

    /// Non-trainable leaf (inputs, targets, fixed weights).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), op_name, f)?;
        Ok(self.push(make(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let value = self
            .value(a)
            .map(|x| if x >= 0.0 { x } else { slope * x });
        Ok(self.push(Op::LeakyRelu(a, slope), value))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::tanh);
        Ok(self.push(Op::Tanh(a), value))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log(a), value))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::exp);
        Ok(self.push(Op::Exp(a), value))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::abs);
        Ok(self.push(Op::Abs(a), value))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(Op::Sum(a), value))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let src = self.value(a);
        if src.is_empty() {
            return Err(MtlError::invalid("mean of empty tensor"));
        }
        let value = Tensor::scalar(src.sum() / src.len() as f64);
        Ok(self.push(Op::Mean(a), value))
    }

    /// `-log softmax(logits)[class]` with max-shift stabilization. Accepts a
    /// vector or a 1 x C row of logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, class: usize) -> Result<NodeId> {
        let l = self.value(logits);
        let c = l.len();
        if c == 0 {
            return Err(MtlError::invalid("softmax_cross_entropy on empty logits"));
        }
        if class >= c {
            return Err(MtlError::invalid(format!(
                "class index {class} out of range for {c} logits"
            )));
        }
        let data = l.data();
        let max = data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut exps: Vec<f64> = data.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().fold(0.0, |acc, &v| acc + v);
        for e in exps.iter_mut() {
            *e /= denom;
        }
        let loss = -((data[class] - max) - denom.ln());
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                class,
                probs: exps,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Mean absolute error between two same-shape tensors.
    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let p = self.value(pred);
        let t = self.value(target);
        if !p.same_shape(t) {
            return Err(MtlError::shape(
                "l1_loss",
                format!("{:?}", p.shape()),
                format!("{:?}", t.shape()),
            ));
        }
        if p.is_empty() {
            return Err(MtlError::invalid("l1_loss on empty tensors"));
        }
        let n = p.len() as f64;
        let total = p
            .data()
            .iter()
            .zip(t.data())
            .fold(0.0, |acc, (&a, &b)| acc + (a - b).abs());
        Ok(self.push(Op::L1Loss { pred, target }, Tensor::scalar(total / n)))
    }

    /// Single reverse sweep from a scalar loss. Returns gradients for every
    /// registered parameter; parameters the loss does not depend on get zero
    /// tensors of the parameter's shape.
    pub fn backward(&self, loss: NodeId) -> Result<BTreeMap<ParamId, Tensor>> {
        if loss.0 >= self.nodes.len() {
            return Err(MtlError::invalid("backward from unknown node"));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(MtlError::shape(
                "backward",
                "scalar loss",
                format!("{:?}", self.nodes[loss.0].value.shape()),
            ));
        }

        let mut adjoint: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adjoint[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            // Cheap clone keeps the borrow checker happy while we write into
            // parent slots of the same vector.
            let g = adjoint[idx].clone();
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (slot, &gi) in adjoint[a.0].iter_mut().zip(&g) {
                        *slot += gi;
                    }
                    for (slot, &gi) in adjoint[b.0].iter_mut().zip(&g) {
                        *slot += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (slot, &gi) in adjoint[a.0].iter_mut().zip(&g) {
                        *slot += gi;
                    }
                    for (slot, &gi) in adjoint[b.0].iter_mut().zip(&g) {
                        *slot -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        adjoint[a.0][i] += g[i] * self.nodes[b.0].value.data()[i];
                    }
                    for i in 0..g.len() {
                        adjoint[b.0][i] += g[i] * self.nodes[a.0].value.data()[i];
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = as_matrix_dims(&self.nodes[a.0].value, "matmul lhs")?;
                    let (_, n) = as_matrix_dims(&self.nodes[b.0].value, "matmul rhs")?;
                    let av = self.nodes[a.0].value.data().to_vec();
                    let bv = self.nodes[b.0].value.data().to_vec();
                    // dA = g . B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            adjoint[a.0][i * k + p] += acc;
                        }
                    }
                    // dB = A^T . g
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * g[i * n + j];
                            }
                            adjoint[b.0][p * n + j] += acc;
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    for i in 0..g.len() {
                        let x = self.nodes[a.0].value.data()[i];
                        let d = if x >= 0.0 { 1.0 } else { slope };
                        adjoint[a.0][i] += g[i] * d;
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        let y = self.nodes[idx].value.data()[i];
                        adjoint[a.0][i] += g[i] * (1.0 - y * y);
                    }
                }
                Op::Log(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        adjoint[a.0][i] += g[i] / self.nodes[a.0].value.data()[i];
                    }
                }
                Op::Exp(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        adjoint[a.0][i] += g[i] * self.nodes[idx].value.data()[i];
                    }
                }
                Op::Abs(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        let x = self.nodes[a.0].value.data()[i];
                        let d = if x >= 0.0 { 1.0 } else { -1.0 };
                        adjoint[a.0][i] += g[i] * d;
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    for slot in adjoint[a.0].iter_mut() {
                        *slot += g[0];
                    }
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = adjoint[a.0].len() as f64;
                    for slot in adjoint[a.0].iter_mut() {
                        *slot += g[0] / n;
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    class,
                    probs,
                } => {
                    let logits = *logits;
                    for (j, &p) in probs.iter().enumerate() {
                        let ind = if j == *class { 1.0 } else { 0.0 };
                        adjoint[logits.0][j] += g[0] * (p - ind);
                    }
                }
                Op::L1Loss { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let n = adjoint[pred.0].len() as f64;
                    for i in 0..adjoint[pred.0].len() {
                        let diff = self.nodes[pred.0].value.data()[i]
                            - self.nodes[target.0].value.data()[i];
                        let s = if diff >= 0.0 { 1.0 } else { -1.0 };
                        adjoint[pred.0][i] += g[0] * s / n;
                    }
                    for i in 0..adjoint[target.0].len() {
                        let diff = self.nodes[pred.0].value.data()[i]
                            - self.nodes[target.0].value.data()[i];
                        let s = if diff >= 0.0 { 1.0 } else { -1.0 };
                        adjoint[target.0][i] -= g[0] * s / n;
                    }
                }
            }
        }

        let mut grads: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for &(pid, node) in &self.params {
            let shape = self.nodes[node.0].value.shape().to_vec();
            let contribution = Tensor::new(shape, adjoint[node.0].clone())?;
            match grads.entry(pid) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(contribution);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let summed = e.get().zip(&contribution, "grad accumulate", |a, b| a + b)?;
                    *e.get_mut() = summed;
                }
            }
        }
        Ok(grads)
    }
}
