use std::collections::BTreeMap;

use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Softsign,
    Relu,
    Square,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Matmul(Var, Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis1(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp { src: Var, lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    name: Option<String>,
}

/// How an operand of an elementwise binary op maps onto the output.
#[derive(Debug, Clone, Copy)]
enum Bcast {
    Same,
    Scalar,
    Row(usize),
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Row(cols) => i % cols,
        }
    }
}

fn broadcast_plan(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, Bcast, Bcast), AutodiffError> {
    let err = || AutodiffError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.shape() == b.shape() {
        return Ok((a.shape().to_vec(), Bcast::Same, Bcast::Same));
    }
    if b.numel() == 1 {
        return Ok((a.shape().to_vec(), Bcast::Same, Bcast::Scalar));
    }
    if a.numel() == 1 {
        return Ok((b.shape().to_vec(), Bcast::Scalar, Bcast::Same));
    }
    let is_row = |t: &Tensor| t.shape().len() == 2 && t.shape()[0] == 1;
    if a.shape().len() == 2 && is_row(b) && b.shape()[1] == a.shape()[1] {
        return Ok((a.shape().to_vec(), Bcast::Same, Bcast::Row(a.shape()[1])));
    }
    if b.shape().len() == 2 && is_row(a) && a.shape()[1] == b.shape()[1] {
        return Ok((b.shape().to_vec(), Bcast::Row(b.shape()[1]), Bcast::Same));
    }
    Err(err())
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Dynamic reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. A graph is
/// built fresh for every loss evaluation and discarded afterwards.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, name: None });
        Var(self.nodes.len() - 1)
    }

    /// Unnamed leaf (data, noise, constants).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    /// Named leaf whose gradient is reported by [`Graph::named_grads`].
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        let v = self.push(t.clone(), Op::Leaf);
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, ba, bb) = broadcast_plan(name, ta, tb)?;
        let numel: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let (x, y) = (da[ba.index(i)], db[bb.index(i)]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Softsign => |x| x / (1.0 + x.abs()),
            Unary::Relu => |x| x.max(0.0),
            Unary::Square => |x| x * x,
            Unary::Sqrt => f64::sqrt,
        };
        let t = self.nodes[a.0].value.map(f);
        self.push(t, Op::Unary(kind, a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn softsign(&mut self, a: Var) -> Var {
        self.unary(Unary::Softsign, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.nodes[a.0].value.map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.nodes[a.0].value.map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, c)
    }

    /// Elementwise clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.nodes[a.0].value.map(|x| x.clamp(lo, hi));
        self.push(t, Op::Clamp { src: a, lo, hi })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    /// `x @ w + b` with `b` a `[1, out]` row broadcast over the batch.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Concatenate 2-D tensors with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let rows = self.nodes[first.0].value.rows();
        let mut cols = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(AutodiffError::Shape {
                    op: "concat",
                    lhs: self.nodes[first.0].value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(r));
            }
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 || start >= end || end > t.cols() {
            return Err(AutodiffError::Slice {
                shape: t.shape().to_vec(),
                start,
                end,
            });
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(out, Op::Slice { src: a, start }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row sums of a 2-D tensor, shape `[rows, 1]`.
    pub fn sum_axis1(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 {
            return Err(AutodiffError::Shape {
                op: "sum_axis1",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let data: Vec<f64> = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let out = Tensor::new(vec![t.rows(), 1], data)?;
        Ok(self.push(out, Op::SumAxis1(a)))
    }

    /// Populate gradients of the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.grads.is_some() {
            return Err(AutodiffError::BackwardTwice);
        }
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Forget gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (_, ba, bb) = broadcast_plan("backward", ta, tb).expect("checked in forward");
                let (da, db) = (ta.data(), tb.data());
                let mut ga = vec![0.0; ta.numel()];
                let mut gb = vec![0.0; tb.numel()];
                for (k, &gk) in g.data().iter().enumerate() {
                    let (ia, ib) = (ba.index(k), bb.index(k));
                    match kind {
                        Binary::Add => {
                            ga[ia] += gk;
                            gb[ib] += gk;
                        }
                        Binary::Sub => {
                            ga[ia] += gk;
                            gb[ib] -= gk;
                        }
                        Binary::Mul => {
                            ga[ia] += gk * db[ib];
                            gb[ib] += gk * da[ia];
                        }
                        Binary::Div => {
                            ga[ia] += gk / db[ib];
                            gb[ib] -= gk * da[ia] / (db[ib] * db[ib]);
                        }
                    }
                }
                acc(grads, *a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                acc(grads, *b, Tensor::new(tb.shape().to_vec(), gb).unwrap());
            }
            Op::Unary(kind, a) => {
                let x = self.nodes[a.0].value.data();
                let y = node.value.data();
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gk, (&xk, &yk))| {
                        gk * match kind {
                            Unary::Exp => yk,
                            Unary::Log => 1.0 / xk,
                            Unary::Tanh => 1.0 - yk * yk,
                            Unary::Sigmoid => yk * (1.0 - yk),
                            Unary::Softplus => sigmoid(xk),
                            Unary::Softsign => {
                                let d = 1.0 + xk.abs();
                                1.0 / (d * d)
                            }
                            Unary::Relu => {
                                if xk > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * xk,
                            Unary::Sqrt => 0.5 / yk,
                        }
                    })
                    .collect();
                acc(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G Bᵀ, dB = Aᵀ G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &tb.data()[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ta.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
                acc(grads, *a, Tensor::new(vec![m, k], ga).unwrap());
                acc(grads, *b, Tensor::new(vec![k, n], gb).unwrap());
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    acc(grads, *p, Tensor::new(vec![rows, w], data).unwrap());
                    offset += w;
                }
            }
            Op::Slice { src, start } => {
                let st = &self.nodes[src.0].value;
                let (rows, cols, w) = (st.rows(), st.cols(), g.cols());
                let mut data = vec![0.0; rows * cols];
                for r in 0..rows {
                    data[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
                }
                acc(grads, *src, Tensor::new(st.shape().to_vec(), data).unwrap());
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape();
                acc(grads, *a, Tensor::full(shape, g.item()));
            }
            Op::Mean(a) => {
                let t = &self.nodes[a.0].value;
                acc(grads, *a, Tensor::full(t.shape(), g.item() / t.numel() as f64));
            }
            Op::SumAxis1(a) => {
                let t = &self.nodes[a.0].value;
                let cols = t.cols();
                let data: Vec<f64> = (0..t.numel()).map(|k| g.data()[k / cols]).collect();
                acc(grads, *a, Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Clamp { src, lo, hi } => {
                let x = self.nodes[src.0].value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gk, &xk)| if xk < *lo || xk > *hi { 0.0 } else { gk })
                    .collect();
                acc(grads, *src, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// Nodes the loss does not depend on report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.as_ref()?;
        Some(
            grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape())),
        )
    }

    /// Gradients of every named parameter leaf, keyed by name.
    ///
    /// A name bound more than once accumulates over its bindings.
    pub fn named_grads(&self) -> Result<BTreeMap<String, Tensor>, AutodiffError> {
        let grads = self.grads.as_ref().ok_or(AutodiffError::NoGradients)?;
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.name else { continue };
            let g = grads[i].clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match out.get_mut(name) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }
}
