//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an arena of [`Node`]s built eagerly by the op methods;
//! every op stores its parents so [`Graph::backward`] can sweep the arena in
//! reverse insertion order (which is a topological order by construction)
//! and accumulate exact analytic adjoints. The primitive set is fixed and
//! small — matmul, add, mul, sigmoid, tanh, exp, ln, recip, square, scale,
//! concat, slice, sum, mean — and every recurrent cell, head, and loss in
//! the crate is composed from it, so the finite-difference suite in
//! [`crate::gradcheck`] covers all training math.
//!
//! Shape rules are strict: `matmul` is matrix (rank 2) times vector (rank 1),
//! elementwise ops require identical shapes, `concat`/`slice` are rank-1.
//! There is no broadcasting. Shape mismatches are programming errors and
//! panic; numeric failures (non-finite loss or gradient) surface as
//! [`Error::Numeric`] from `backward`.
//!
//! A graph is single-owner while being built and differentiated. Parallelism
//! happens one level up: batch elements are evaluated on separate graphs and
//! their parameter gradients summed in a fixed order at the join point.

use crate::error::{Error, Result};
use crate::tensor::Array;

/// Handle to a node in one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Recip(NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    Concat(NodeId, NodeId),
    Slice { src: NodeId, start: usize, end: usize },
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Recip(..) => "recip",
            Op::Square(..) => "square",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

struct Node {
    value: Array,
    op: Op,
    /// True when this node transitively depends on a parameter leaf, i.e.
    /// backward must propagate through it.
    needs_grad: bool,
}

/// Reverse-mode autodiff arena.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Graph {
        Graph { nodes: Vec::with_capacity(n), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `id`. Present for
    /// parameter leaves; intermediate grads are freed during the sweep.
    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that backward treats as data: no gradient is kept for it.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that backward computes a gradient for.
    pub fn param(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    // ---- primitives -------------------------------------------------------

    /// Matrix (rank 2) times vector (rank 1).
    pub fn matmul(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let (av, xv) = (&self.nodes[a.0].value, &self.nodes[x.0].value);
        assert_eq!(av.rank(), 2, "matmul: left operand must be rank 2");
        assert_eq!(xv.rank(), 1, "matmul: right operand must be rank 1");
        let (m, k) = (av.shape()[0], av.shape()[1]);
        assert_eq!(k, xv.len(), "matmul: inner dimensions {k} vs {}", xv.len());
        let ad = av.data();
        let xd = xv.data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &ad[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] * xd[j];
            }
            out[i] = acc;
        }
        let needs = self.needs(a) || self.needs(x);
        self.push(Array::vector(out), Op::MatMul(a, x), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Array::new(av.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Array::new(av.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Array::new(xv.shape().to_vec(), data);
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Recip(x), f64::recip)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    /// Rank-1 concatenation `[a; b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.rank(), 1, "concat: rank-1 operands only");
        assert_eq!(bv.rank(), 1, "concat: rank-1 operands only");
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let needs = self.needs(a) || self.needs(b);
        self.push(Array::vector(data), Op::Concat(a, b), needs)
    }

    /// Rank-1 contiguous slice `x[start..end]`.
    pub fn slice(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.rank(), 1, "slice: rank-1 operand only");
        assert!(start <= end && end <= xv.len(), "slice: {start}..{end} out of 0..{}", xv.len());
        let data = xv.data()[start..end].to_vec();
        let needs = self.needs(x);
        self.push(Array::vector(data), Op::Slice { src: x, start, end }, needs)
    }

    /// Sum of all elements, as a one-element array.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x.0].value.iter().sum();
        let needs = self.needs(x);
        self.push(Array::scalar(total), Op::Sum(x), needs)
    }

    /// Mean of all elements, as a one-element array.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert!(!xv.is_empty(), "mean: empty operand");
        let total: f64 = xv.iter().sum();
        let value = Array::scalar(total / xv.len() as f64);
        let needs = self.needs(x);
        self.push(value, Op::Mean(x), needs)
    }

    // ---- composed conveniences (no new adjoints) --------------------------

    /// `a - b`, composed as `a + (-1)·b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let shape = self.nodes[x.0].value.shape().to_vec();
        let ones = self.constant(Array::full(shape, 1.0));
        self.sub(ones, x)
    }

    /// `x + c` elementwise, with `c` a constant.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let shape = self.nodes[x.0].value.shape().to_vec();
        let cn = self.constant(Array::full(shape, c));
        self.add(x, cn)
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Accumulate ∂loss/∂node for every parameter leaf reachable from `loss`.
    ///
    /// Intermediate gradients are dropped as soon as their node has been
    /// processed; query results with [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Numeric {
                op: self.nodes[loss.0].op.tag(),
                msg: format!("loss value {} is not finite", lv.data()[0]),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Array::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                self.grads[i] = None;
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            if !g.all_finite() {
                return Err(Error::Numeric {
                    op: self.nodes[i].op.tag(),
                    msg: "non-finite gradient".into(),
                });
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    // Parameter leaf: keep the accumulated gradient.
                    self.grads[i] = Some(g);
                }
                Op::MatMul(a, x) => {
                    let gd = g.data();
                    if self.needs(a) {
                        let k = self.nodes[a.0].value.shape()[1];
                        let xd = self.nodes[x.0].value.data().to_vec();
                        let buf = self.grad_buf(a);
                        for (gi, xrow) in gd.iter().zip(buf.chunks_mut(k)) {
                            for (slot, xj) in xrow.iter_mut().zip(&xd) {
                                *slot += gi * xj;
                            }
                        }
                    }
                    if self.needs(x) {
                        let k = self.nodes[a.0].value.shape()[1];
                        let ad = self.nodes[a.0].value.data().to_vec();
                        let buf = self.grad_buf(x);
                        for (gi, arow) in gd.iter().zip(ad.chunks(k)) {
                            for (slot, aij) in buf.iter_mut().zip(arow) {
                                *slot += gi * aij;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        for (slot, gi) in self.grad_buf(a).iter_mut().zip(g.data()) {
                            *slot += gi;
                        }
                    }
                    if self.needs(b) {
                        for (slot, gi) in self.grad_buf(b).iter_mut().zip(g.data()) {
                            *slot += gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let bd = self.nodes[b.0].value.data().to_vec();
                        for ((slot, gi), bi) in self.grad_buf(a).iter_mut().zip(g.data()).zip(&bd) {
                            *slot += gi * bi;
                        }
                    }
                    if self.needs(b) {
                        let ad = self.nodes[a.0].value.data().to_vec();
                        for ((slot, gi), ai) in self.grad_buf(b).iter_mut().zip(g.data()).zip(&ad) {
                            *slot += gi * ai;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let yd = self.nodes[i].value.data().to_vec();
                    for ((slot, gi), yi) in self.grad_buf(x).iter_mut().zip(g.data()).zip(&yd) {
                        *slot += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(x) => {
                    let yd = self.nodes[i].value.data().to_vec();
                    for ((slot, gi), yi) in self.grad_buf(x).iter_mut().zip(g.data()).zip(&yd) {
                        *slot += gi * (1.0 - yi * yi);
                    }
                }
                Op::Exp(x) => {
                    let yd = self.nodes[i].value.data().to_vec();
                    for ((slot, gi), yi) in self.grad_buf(x).iter_mut().zip(g.data()).zip(&yd) {
                        *slot += gi * yi;
                    }
                }
                Op::Ln(x) => {
                    let xd = self.nodes[x.0].value.data().to_vec();
                    for ((slot, gi), xi) in self.grad_buf(x).iter_mut().zip(g.data()).zip(&xd) {
                        *slot += gi / xi;
                    }
                }
                Op::Recip(x) => {
                    let yd = self.nodes[i].value.data().to_vec();
                    for ((slot, gi), yi) in self.grad_buf(x).iter_mut().zip(g.data()).zip(&yd) {
                        *slot -= gi * yi * yi;
                    }
                }
                Op::Square(x) => {
                    let xd = self.nodes[x.0].value.data().to_vec();
                    for ((slot, gi), xi) in self.grad_buf(x).iter_mut().zip(g.data()).zip(&xd) {
                        *slot += 2.0 * gi * xi;
                    }
                }
                Op::Scale(x, c) => {
                    for (slot, gi) in self.grad_buf(x).iter_mut().zip(g.data()) {
                        *slot += c * gi;
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    if self.needs(a) {
                        for (slot, gi) in self.grad_buf(a).iter_mut().zip(&g.data()[..na]) {
                            *slot += gi;
                        }
                    }
                    if self.needs(b) {
                        for (slot, gi) in self.grad_buf(b).iter_mut().zip(&g.data()[na..]) {
                            *slot += gi;
                        }
                    }
                }
                Op::Slice { src, start, end } => {
                    let buf = self.grad_buf(src);
                    for (slot, gi) in buf[start..end].iter_mut().zip(g.data()) {
                        *slot += gi;
                    }
                }
                Op::Sum(x) => {
                    let gi = g.item();
                    for slot in self.grad_buf(x) {
                        *slot += gi;
                    }
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let gi = g.item() / n;
                    for slot in self.grad_buf(x) {
                        *slot += gi;
                    }
                }
            }
        }
        Ok(())
    }

    /// Lazily allocated gradient accumulator for `id`, as a mutable slice.
    fn grad_buf(&mut self, id: NodeId) -> &mut [f64] {
        let shape = self.nodes[id.0].value.shape().to_vec();
        self.grads[id.0].get_or_insert_with(|| Array::zeros(shape)).data_mut()
    }
}

/// Max over coordinates of `|g_analytic − g_fd| / max(1e-8, |g_fd|)` where
/// `g_fd` is the central finite difference `(f(x+ε·eᵢ) − f(x−ε·eᵢ)) / 2ε`.
///
/// `build` must construct the same scalar function each call; it receives the
/// input as a parameter leaf. Errors if the function value is non-finite at
/// any probe point.
pub fn finite_diff_check<F>(build: F, x: &Array, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> NodeId,
{
    assert!(eps > 0.0, "finite_diff_check: eps must be positive");

    let eval = |probe: &Array| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.constant(probe.clone());
        let loss = build(&mut g, leaf);
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(Error::contract(format!(
                "finite_diff_check: f must be scalar, got shape {:?}",
                v.shape()
            )));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::Numeric { op: "finite_diff_check", msg: format!("f(x) = {v}") });
        }
        Ok(v)
    };

    // Analytic gradient.
    let mut g = Graph::new();
    let leaf = g.param(x.clone());
    let loss = build(&mut g, leaf);
    g.backward(loss)?;
    let analytic = g.grad(leaf).cloned().unwrap_or_else(|| Array::zeros(x.shape().to_vec()));

    // Central differences, one coordinate at a time.
    let mut max_rel = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (analytic.data()[i] - fd).abs() / fd.abs().max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
