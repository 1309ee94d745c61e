//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Node ids are
//! assigned in creation order, so the node list is already a topological
//! order and [`Tape::backward`] only has to walk it in reverse. The tape is
//! cleared by `backward`, and any `Var` created before the clear becomes
//! stale.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::ptr;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Probability clamp used by binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    ScaleRows(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    SumSquares(usize),
    Column(usize, usize),
    Concat(Vec<usize>),
    Mse(usize, usize),
    Bce(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

struct Inner {
    nodes: Vec<Node>,
    generation: u64,
}

/// Recording of primitive operations for one forward pass.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    generation: u64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} gen {})", self.id, self.generation)
    }
}

/// Gradients produced by [`Tape::backward`] for every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    generation: u64,
    by_id: HashMap<usize, Tensor>,
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of a trainable leaf created on the tape that produced these
    /// gradients.
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.by_id.get(&var.id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                generation: 0,
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, None)
    }

    /// An anonymous trainable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, None)
    }

    /// A named trainable leaf; its gradient is reported under `name`.
    pub fn param(&self, name: impl Into<String>, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, Some(name.into()))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        for p in parts {
            p.check(self)?;
        }
        let (value, requires_grad) = {
            let inner = self.inner.borrow();
            let values: Vec<&Tensor> = parts.iter().map(|p| &inner.nodes[p.id].value).collect();
            let rg = parts.iter().any(|p| inner.nodes[p.id].requires_grad);
            (Tensor::hstack(&values)?, rg)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(value, Op::Concat(ids), requires_grad, None))
    }

    fn generation(&self) -> u64 {
        self.inner.borrow().generation
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, name: Option<String>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
            name,
        });
        Var {
            tape: self,
            id,
            generation: inner.generation,
        }
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every
    /// trainable leaf (zeros when a leaf does not influence the loss) and
    /// clears the tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        loss.check(self)?;
        let mut inner = self.inner.borrow_mut();
        let root = &inner.nodes[loss.id];
        if root.value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Usage(
                "backward called on a value that depends on no trainable tensor".into(),
            ));
        }

        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            propagate(nodes, id, &g, &mut grads);
        }

        let mut by_id = HashMap::new();
        let mut by_name = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let g = grads
                .get_mut(id)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
            if let Some(name) = &node.name {
                by_name.insert(name.clone(), g.clone());
            }
            by_id.insert(id, g);
        }

        let generation = inner.generation;
        inner.nodes.clear();
        inner.generation += 1;
        Ok(Gradients {
            generation,
            by_id,
            by_name,
        })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            if rg(a) {
                let mut da = Tensor::zeros(val(a).rows(), val(a).cols());
                gemm_nt(g, val(b), &mut da);
                accumulate(nodes, grads, a, da);
            }
            if rg(b) {
                let mut db = Tensor::zeros(val(b).rows(), val(b).cols());
                gemm_tn(val(a), g, &mut db);
                accumulate(nodes, grads, b, db);
            }
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transpose()),
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if rg(a) {
                accumulate(nodes, grads, a, zip_map(g, val(b), |x, y| x * y));
            }
            if rg(b) {
                accumulate(nodes, grads, b, zip_map(g, val(a), |x, y| x * y));
            }
        }
        Op::Scale(a, s) => {
            let s = *s;
            accumulate(nodes, grads, *a, g.map(|v| v * s));
        }
        Op::AddRow(a, b) => {
            let (a, b) = (*a, *b);
            accumulate(nodes, grads, a, g.clone());
            if rg(b) {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(nodes, grads, b, db);
            }
        }
        Op::ScaleRows(a, c) => {
            let (a, c) = (*a, *c);
            let (av, cv) = (val(a), val(c));
            if rg(a) {
                let da = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * cv.get(i, 0));
                accumulate(nodes, grads, a, da);
            }
            if rg(c) {
                let dc = (0..g.rows())
                    .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                    .collect();
                accumulate(nodes, grads, c, Tensor::column(dc));
            }
        }
        Op::Relu(a) => {
            let da = zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
            accumulate(nodes, grads, *a, da);
        }
        Op::Sigmoid(a) => {
            let da = zip_map(g, out, |gv, s| gv * s * (1.0 - s));
            accumulate(nodes, grads, *a, da);
        }
        Op::SoftmaxRows(a) => {
            let mut da = Tensor::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let s = out.row(r);
                let gr = g.row(r);
                let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                for c in 0..out.cols() {
                    da.set(r, c, s[c] * (gr[c] - dot));
                }
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::Sqrt(a) => {
            // d sqrt(x) at x = 0 is taken as 0.
            let da = zip_map(g, out, |gv, s| if s > 0.0 { gv / (2.0 * s) } else { 0.0 });
            accumulate(nodes, grads, *a, da);
        }
        Op::Sum(a) => {
            let v = val(*a);
            accumulate(
                nodes,
                grads,
                *a,
                Tensor::filled(v.rows(), v.cols(), g.item()),
            );
        }
        Op::Mean(a) => {
            let v = val(*a);
            let s = g.item() / v.len() as f64;
            accumulate(nodes, grads, *a, Tensor::filled(v.rows(), v.cols(), s));
        }
        Op::SumSquares(a) => {
            let s = 2.0 * g.item();
            accumulate(nodes, grads, *a, val(*a).map(|x| s * x));
        }
        Op::Column(a, j) => {
            let v = val(*a);
            let mut da = Tensor::zeros(v.rows(), v.cols());
            for r in 0..v.rows() {
                da.set(r, *j, g.get(r, 0));
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if rg(p) {
                    let dp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                    accumulate(nodes, grads, p, dp);
                }
                offset += w;
            }
        }
        Op::Mse(a, b) => {
            let (a, b) = (*a, *b);
            let s = 2.0 * g.item() / val(a).len() as f64;
            let d = zip_map(val(a), val(b), |x, y| s * (x - y));
            if rg(b) {
                accumulate(nodes, grads, b, d.map(|v| -v));
            }
            accumulate(nodes, grads, a, d);
        }
        Op::Bce(p, t) => {
            let (p, t) = (*p, *t);
            let s = g.item() / val(p).len() as f64;
            if rg(p) {
                let dp = zip_map(val(p), val(t), |pv, tv| {
                    if pv <= BCE_EPS || pv >= 1.0 - BCE_EPS {
                        0.0
                    } else {
                        s * (-tv / pv + (1.0 - tv) / (1.0 - pv))
                    }
                });
                accumulate(nodes, grads, p, dp);
            }
            if rg(t) {
                let dt = zip_map(val(p), val(t), |pv, _| {
                    let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    s * ((1.0 - pc).ln() - pc.ln())
                });
                accumulate(nodes, grads, t, dt);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip_map on equal shapes")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.set(r, c, e);
            total += e;
        }
        for c in 0..x.cols() {
            out.set(r, c, out.get(r, c) / total);
        }
    }
    out
}

/// Mean of `−[t ln p + (1 − t) ln(1 − p)]` with `p` clamped to
/// `[BCE_EPS, 1 − BCE_EPS]`.
pub fn bce_value(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.len() as f64;
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

pub fn mse_value(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.len() as f64;
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn check(&self, tape: &Tape) -> Result<()> {
        if !ptr::eq(self.tape, tape) {
            return Err(Error::Usage("variables from different tapes".into()));
        }
        if self.generation != tape.generation() {
            return Err(Error::Usage(
                "variable belongs to a tape that was already consumed by backward".into(),
            ));
        }
        Ok(())
    }

    fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let inner = self.tape.inner.borrow();
        assert_eq!(
            self.generation, inner.generation,
            "stale variable: its tape was cleared by backward"
        );
        f(&inner.nodes[self.id].value)
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        self.with(Tensor::clone)
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        self.with(Tensor::item)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.with(Tensor::shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.with(|_| ());
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        self.check(self.tape)?;
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (f(&n.value)?, n.requires_grad)
        };
        Ok(self.tape.push(value, op, rg, None))
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.check(self.tape)?;
        other.check(self.tape)?;
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let (a, b) = (&inner.nodes[self.id], &inner.nodes[other.id]);
            (f(&a.value, &b.value)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, op, rg, None))
    }

    fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::dim(op, a.shape(), b.shape()));
        }
        Ok(())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| {
            if a.cols() != b.rows() {
                return Err(Error::dim("matmul", a.shape(), b.shape()));
            }
            let mut out = Tensor::zeros(a.rows(), b.cols());
            gemm_nn(a, b, &mut out);
            Ok(out)
        })
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), |a| Ok(a.transpose()))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            Self::same_shape("add", a, b)?;
            Ok(zip_map(a, b, |x, y| x + y))
        })
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            Self::same_shape("sub", a, b)?;
            Ok(zip_map(a, b, |x, y| x - y))
        })
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            Self::same_shape("mul", a, b)?;
            Ok(zip_map(a, b, |x, y| x * y))
        })
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, s), |a| Ok(a.map(|v| v * s)))
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, b| {
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(Error::dim("add_row", a.shape(), b.shape()));
            }
            let mut out = a.clone();
            for r in 0..a.rows() {
                for c in 0..a.cols() {
                    out.set(r, c, a.get(r, c) + b.get(0, c));
                }
            }
            Ok(out)
        })
    }

    /// Multiplies row `i` by entry `i` of the column vector `weights`.
    pub fn scale_rows(self, weights: Var<'t>) -> Result<Var<'t>> {
        self.binary(weights, Op::ScaleRows(self.id, weights.id), |a, c| {
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::dim("scale_rows", a.shape(), c.shape()));
            }
            Ok(Tensor::from_fn(a.rows(), a.cols(), |i, j| {
                a.get(i, j) * c.get(i, 0)
            }))
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |a| Ok(a.map(|v| v.max(0.0))))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |a| Ok(a.map(sigmoid)))
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        self.unary(Op::SoftmaxRows(self.id), |a| Ok(softmax_rows(a)))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt(self.id), |a| {
            if a.data().iter().any(|&v| v < 0.0) {
                return Err(Error::Usage("sqrt of a negative value".into()));
            }
            Ok(a.map(f64::sqrt))
        })
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |a| {
            if a.is_empty() {
                return Err(Error::Usage("mean of an empty tensor".into()));
            }
            Ok(Tensor::scalar(a.sum() / a.len() as f64))
        })
    }

    pub fn sum_squares(self) -> Result<Var<'t>> {
        self.unary(Op::SumSquares(self.id), |a| {
            Ok(Tensor::scalar(a.sum_squares()))
        })
    }

    /// Column `j` as an `n × 1` node.
    pub fn column(self, j: usize) -> Result<Var<'t>> {
        self.unary(Op::Column(self.id, j), |a| {
            if j >= a.cols() {
                return Err(Error::dim("column", a.shape(), (0, j)));
            }
            Ok(Tensor::column(a.col_values(j)))
        })
    }

    /// Mean squared difference to `target`.
    pub fn mse(self, target: Var<'t>) -> Result<Var<'t>> {
        self.binary(target, Op::Mse(self.id, target.id), |a, b| {
            Self::same_shape("mse", a, b)?;
            if a.is_empty() {
                return Err(Error::Usage("mse of empty tensors".into()));
            }
            Ok(Tensor::scalar(mse_value(a, b)))
        })
    }

    pub fn rmse(self, target: Var<'t>) -> Result<Var<'t>> {
        self.mse(target)?.sqrt()
    }

    /// Binary cross-entropy of probabilities `self` against 0/1 `target`.
    pub fn bce(self, target: Var<'t>) -> Result<Var<'t>> {
        self.binary(target, Op::Bce(self.id, target.id), |p, t| {
            Self::same_shape("bce", p, t)?;
            if p.is_empty() {
                return Err(Error::Usage("bce of empty tensors".into()));
            }
            Ok(Tensor::scalar(bce_value(p, t)))
        })
    }
}
