use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    /// `x · w + b` with `b` broadcast over rows.
    Affine(Var, Var, Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SoftClamp(Var, f64),
    SelectCols(Var, Vec<usize>),
    MergeCols {
        left: Var,
        left_cols: Vec<usize>,
        right: Var,
        right_cols: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Dynamic computation graph recording values and gradient rules.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of its shape when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
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

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Param, t, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out = ta.zip(tb, f);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(op, out, ng))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.nodes[a.0].value.map(f);
        let ng = self.ng(a);
        self.push(op, out, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::new(vec![n, m], matmul_raw(ta.data(), tb.data(), n, k, m))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), out, ng))
    }

    /// Fully connected layer `x · w + b`; `x` is `n×k`, `w` is `k×m`, `b` has `m` entries.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.cols() != tw.rows() {
            return Err(shape_err("affine", tx, tw));
        }
        if tb.len() != tw.cols() {
            return Err(shape_err("affine bias", tw, tb));
        }
        let (n, k, m) = (tx.rows(), tx.cols(), tw.cols());
        let mut data = matmul_raw(tx.data(), tw.data(), n, k, m);
        for row in data.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Op::Affine(x, w, b), out, ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), libm::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), libm::log)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Op::Mean(a), Tensor::scalar(s), ng)
    }

    /// `bound · (2/π) · atan(x / bound)`: smooth, odd, and bounded by `bound`.
    pub fn soft_clamp(&mut self, a: Var, bound: f64) -> Var {
        self.unary(a, Op::SoftClamp(a, bound), |x| soft_clamp(x, bound))
    }

    /// Gathers columns `cols` (in that order) from a matrix.
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 || cols.iter().any(|&c| c >= t.cols()) {
            return Err(Error::Shape {
                op: "select_cols",
                lhs: t.shape().to_vec(),
                rhs: cols.to_vec(),
            });
        }
        let (n, m) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            for &c in cols {
                data.push(t.data()[i * m + c]);
            }
        }
        let out = Tensor::new(vec![n, cols.len()], data)?;
        let ng = self.ng(a);
        Ok(self.push(Op::SelectCols(a, cols.to_vec()), out, ng))
    }

    /// Interleaves the columns of `left` and `right` into a matrix whose
    /// column `left_cols[j]` is `left[:, j]` and `right_cols[j]` is `right[:, j]`.
    /// The two index lists must partition `0..left_cols.len() + right_cols.len()`.
    pub fn merge_cols(
        &mut self,
        left: Var,
        left_cols: &[usize],
        right: Var,
        right_cols: &[usize],
    ) -> Result<Var> {
        let (tl, tr) = (&self.nodes[left.0].value, &self.nodes[right.0].value);
        let width = left_cols.len() + right_cols.len();
        let mut seen = vec![false; width];
        for &c in left_cols.iter().chain(right_cols) {
            if c >= width || seen[c] {
                return Err(shape_err("merge_cols", tl, tr));
            }
            seen[c] = true;
        }
        if tl.shape().len() != 2
            || tr.shape().len() != 2
            || tl.rows() != tr.rows()
            || tl.cols() != left_cols.len()
            || tr.cols() != right_cols.len()
        {
            return Err(shape_err("merge_cols", tl, tr));
        }
        let n = tl.rows();
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for (j, &c) in left_cols.iter().enumerate() {
                data[i * width + c] = tl.data()[i * left_cols.len() + j];
            }
            for (j, &c) in right_cols.iter().enumerate() {
                data[i * width + c] = tr.data()[i * right_cols.len() + j];
            }
        }
        let out = Tensor::new(vec![n, width], data)?;
        let ng = self.ng(left) || self.ng(right);
        Ok(self.push(
            Op::MergeCols {
                left,
                left_cols: left_cols.to_vec(),
                right,
                right_cols: right_cols.to_vec(),
            },
            out,
            ng,
        ))
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::new(rv.shape().to_vec(), vec![1.0])?);
        }
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // leaves-only policy is not enforced; intermediate gradients remain available
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if !self.nodes[to.0].needs_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.accumulate(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Param | Op::Constant => {}
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.send(grads, *a, g.zip(val(*b), |gi, bi| gi * bi));
                }
                if self.ng(*b) {
                    self.send(grads, *b, g.zip(val(*a), |gi, ai| gi * ai));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.send(grads, *a, g.map(|x| c * x));
            }
            Op::MatMul(a, b) => self.matmul_back(*a, *b, None, g, grads),
            Op::Affine(x, w, b) => self.matmul_back(*x, *w, Some(*b), g, grads),
            Op::Tanh(a) => {
                self.send(grads, *a, g.zip(&node.value, |gi, y| gi * (1.0 - y * y)));
            }
            Op::Exp(a) => {
                self.send(grads, *a, g.zip(&node.value, |gi, y| gi * y));
            }
            Op::Log(a) => {
                self.send(grads, *a, g.zip(val(*a), |gi, x| gi / x));
            }
            Op::Square(a) => {
                self.send(grads, *a, g.zip(val(*a), |gi, x| 2.0 * gi * x));
            }
            Op::Sum(a) => {
                let s = g.item();
                self.send(grads, *a, val(*a).map(|_| s));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let s = g.item() / t.len().max(1) as f64;
                self.send(grads, *a, t.map(|_| s));
            }
            Op::SoftClamp(a, bound) => {
                let bound = *bound;
                self.send(grads, *a, g.zip(val(*a), |gi, x| gi * soft_clamp_grad(x, bound)));
            }
            Op::SelectCols(a, cols) => {
                let src = val(*a);
                let (n, m, k) = (src.rows(), src.cols(), cols.len());
                let mut out = vec![0.0; n * m];
                for i in 0..n {
                    for (j, &c) in cols.iter().enumerate() {
                        out[i * m + c] += g.data()[i * k + j];
                    }
                }
                let t = Tensor::new(src.shape().to_vec(), out).expect("shape preserved");
                self.send(grads, *a, t);
            }
            Op::MergeCols {
                left,
                left_cols,
                right,
                right_cols,
            } => {
                let width = g.cols();
                let n = g.rows();
                for (side, cols) in [(*left, left_cols), (*right, right_cols)] {
                    if !self.ng(side) {
                        continue;
                    }
                    let mut out = Vec::with_capacity(n * cols.len());
                    for i in 0..n {
                        for &c in cols.iter() {
                            out.push(g.data()[i * width + c]);
                        }
                    }
                    let t = Tensor::new(vec![n, cols.len()], out).expect("shape preserved");
                    self.send(grads, side, t);
                }
            }
        }
    }

    fn matmul_back(&self, x: Var, w: Var, b: Option<Var>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let (n, k, m) = (tx.rows(), tx.cols(), tw.cols());
        if self.ng(x) {
            let dx = matmul_nt(g.data(), tw.data(), n, m, k);
            self.send(grads, x, Tensor::new(tx.shape().to_vec(), dx).expect("shape"));
        }
        if self.ng(w) {
            let dw = matmul_tn(tx.data(), g.data(), n, k, m);
            self.send(grads, w, Tensor::new(tw.shape().to_vec(), dw).expect("shape"));
        }
        if let Some(b) = b {
            if self.ng(b) {
                let mut db = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                let tb = &self.nodes[b.0].value;
                self.send(grads, b, Tensor::new(tb.shape().to_vec(), db).expect("shape"));
            }
        }
    }
}

pub fn soft_clamp(x: f64, bound: f64) -> f64 {
    bound * core::f64::consts::FRAC_2_PI * libm::atan(x / bound)
}

pub fn soft_clamp_grad(x: f64, bound: f64) -> f64 {
    let r = x / bound;
    core::f64::consts::FRAC_2_PI / (1.0 + r * r)
}
